#pragma once

#include <complex>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace kvae {

using cdouble = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;
using RVector = Eigen::VectorXd;
using RMatrix = Eigen::MatrixXd;

// Dense Hermitian matrix. The constructor symmetrizes, so entry(i,j) ==
// conj(entry(j,i)) holds bit-for-bit and the diagonal is exactly real.
class HermitianMatrix {
 public:
  HermitianMatrix() = default;
  explicit HermitianMatrix(const CMatrix& a);

  static HermitianMatrix identity(Eigen::Index d);
  static HermitianMatrix zero(Eigen::Index d);
  static HermitianMatrix diagonal(const RVector& diag);
  // Rejects inputs whose anti-Hermitian part exceeds tol * max(1, |A|_F).
  static HermitianMatrix checked(const CMatrix& a, double tol = 1e-9);

  Eigen::Index dim() const { return m_.rows(); }
  cdouble operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  const CMatrix& dense() const { return m_; }

  RMatrix real_part() const { return m_.real(); }
  RMatrix imag_part() const { return m_.imag(); }

  double trace() const { return m_.diagonal().real().sum(); }
  double frobenius_norm() const { return m_.norm(); }

  HermitianMatrix operator+(const HermitianMatrix& o) const;
  HermitianMatrix operator-(const HermitianMatrix& o) const;
  HermitianMatrix operator*(double s) const;
  // U^H * this * U
  HermitianMatrix congruence(const CMatrix& u) const;

 private:
  CMatrix m_;
};

// PSD tolerance used throughout: min eigenvalue >= -psd_tolerance(S).
double psd_tolerance(const HermitianMatrix& s);

RVector eigenvalues(const HermitianMatrix& s);
double min_eigenvalue(const HermitianMatrix& s);
double min_eigenvalue(const CMatrix& a);  // throws NonHermitianInput
bool is_psd(const HermitianMatrix& s);

// Cholesky-based log determinant; throws NotPD.
double logdet(const HermitianMatrix& s);
double logdet_diagonal(const RVector& diag);
cdouble determinant(const HermitianMatrix& s);

// Gamma with Gamma^H Gamma == S. Throws NotPSD below tolerance; small
// negative eigenvalues inside tolerance are clamped to zero.
CMatrix sqrt_factor(const HermitianMatrix& s);

// Real-surrogate layout (x_1..x_d, y_1..y_d).
RVector to_real(const CVector& z);
CVector from_real(const RVector& r);

double max_abs(const CMatrix& a);

}  // namespace kvae
