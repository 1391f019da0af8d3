#include "kvae/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "kvae/error.hpp"

namespace kvae {

HermitianMatrix::HermitianMatrix(const CMatrix& a) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "Hermitian matrix must be square");
  }
  const Eigen::Index d = a.rows();
  m_.resize(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    m_(j, j) = cdouble(a(j, j).real(), 0.0);
    for (Eigen::Index i = j + 1; i < d; ++i) {
      const cdouble v = 0.5 * (a(i, j) + std::conj(a(j, i)));
      m_(i, j) = v;
      m_(j, i) = std::conj(v);
    }
  }
}

HermitianMatrix HermitianMatrix::identity(Eigen::Index d) {
  return HermitianMatrix(CMatrix::Identity(d, d));
}

HermitianMatrix HermitianMatrix::zero(Eigen::Index d) {
  return HermitianMatrix(CMatrix::Zero(d, d));
}

HermitianMatrix HermitianMatrix::diagonal(const RVector& diag) {
  CMatrix m = CMatrix::Zero(diag.size(), diag.size());
  m.diagonal() = diag.cast<cdouble>();
  return HermitianMatrix(m);
}

HermitianMatrix HermitianMatrix::checked(const CMatrix& a, double tol) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorCode::kDimensionMismatch, "Hermitian matrix must be square");
  }
  const double skew = (a - a.adjoint()).norm() * 0.5;
  if (!(skew <= tol * std::max(1.0, a.norm()))) {
    throw Error(ErrorCode::kNonHermitianInput,
                "anti-Hermitian part norm " + std::to_string(skew));
  }
  return HermitianMatrix(a);
}

HermitianMatrix HermitianMatrix::operator+(const HermitianMatrix& o) const {
  return HermitianMatrix(m_ + o.m_);
}

HermitianMatrix HermitianMatrix::operator-(const HermitianMatrix& o) const {
  return HermitianMatrix(m_ - o.m_);
}

HermitianMatrix HermitianMatrix::operator*(double s) const {
  return HermitianMatrix(m_ * s);
}

HermitianMatrix HermitianMatrix::congruence(const CMatrix& u) const {
  return HermitianMatrix(u.adjoint() * m_ * u);
}

double psd_tolerance(const HermitianMatrix& s) { return 1e-10 * s.frobenius_norm(); }

RVector eigenvalues(const HermitianMatrix& s) {
  if (s.dim() == 0) return RVector();
  Eigen::SelfAdjointEigenSolver<CMatrix> es(s.dense(), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double min_eigenvalue(const HermitianMatrix& s) {
  if (s.dim() == 0) throw Error(ErrorCode::kDimensionMismatch, "empty matrix");
  return eigenvalues(s)(0);
}

double min_eigenvalue(const CMatrix& a) { return min_eigenvalue(HermitianMatrix::checked(a)); }

bool is_psd(const HermitianMatrix& s) { return min_eigenvalue(s) >= -psd_tolerance(s); }

double logdet(const HermitianMatrix& s) {
  Eigen::LLT<CMatrix> llt(s.dense());
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kNotPd, "Cholesky factorization failed");
  }
  const auto diag = llt.matrixLLT().diagonal();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    const double l = diag(i).real();
    if (!(l > 0.0)) throw Error(ErrorCode::kNotPd, "non-positive pivot");
    acc += 2.0 * std::log(l);
  }
  return acc;
}

double logdet_diagonal(const RVector& diag) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0)) throw Error(ErrorCode::kNotPd, "non-positive diagonal entry");
    acc += std::log(diag(i));
  }
  return acc;
}

cdouble determinant(const HermitianMatrix& s) { return s.dense().determinant(); }

CMatrix sqrt_factor(const HermitianMatrix& s) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(s.dense());
  const RVector& lam = es.eigenvalues();
  if (lam.size() > 0 && lam(0) < -psd_tolerance(s)) {
    throw Error(ErrorCode::kNotPsd, "min eigenvalue " + std::to_string(lam(0)));
  }
  const RVector root = lam.cwiseMax(0.0).cwiseSqrt();
  // S = V diag(lam) V^H, so Gamma = diag(sqrt lam) V^H.
  return root.cast<cdouble>().asDiagonal() * es.eigenvectors().adjoint();
}

RVector to_real(const CVector& z) {
  const Eigen::Index d = z.size();
  RVector r(2 * d);
  r.head(d) = z.real();
  r.tail(d) = z.imag();
  return r;
}

CVector from_real(const RVector& r) {
  const Eigen::Index d = r.size() / 2;
  CVector z(d);
  for (Eigen::Index i = 0; i < d; ++i) z(i) = cdouble(r(i), r(d + i));
  return z;
}

double max_abs(const CMatrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace kvae
