#include "kvae/wirtinger.hpp"

#include <cmath>
#include <string>

#include "kvae/error.hpp"

namespace kvae {

namespace {

void require_finite(const CMatrix& values) {
  if (!values.allFinite()) {
    throw Error(ErrorCode::kNonFiniteEvaluation, "map returned NaN/Inf on the stencil");
  }
}

// Displacement of real-surrogate coordinate p (x_1..x_d, y_1..y_d) by h.
void shift(CVector& z, Eigen::Index p, double h) {
  const Eigen::Index d = z.size();
  if (p < d) {
    z(p) += cdouble(h, 0.0);
  } else {
    z(p - d) += cdouble(0.0, h);
  }
}

// Second-order stencil over the real coordinates. When diagonal_pairs is
// set only the (x_a, y_a) cross terms are generated, which is all the
// diagonal of a Levi matrix needs.
struct SecondOrderStencil {
  Eigen::Index m = 0;  // real dimension
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  CMatrix points;

  SecondOrderStencil(const CVector& z, double h, bool diagonal_pairs) {
    const Eigen::Index d = z.size();
    m = 2 * d;
    if (diagonal_pairs) {
      for (Eigen::Index a = 0; a < d; ++a) pairs.emplace_back(a, d + a);
    } else {
      for (Eigen::Index p = 0; p < m; ++p)
        for (Eigen::Index q = p + 1; q < m; ++q) pairs.emplace_back(p, q);
    }
    const Eigen::Index count = 1 + 2 * m + 4 * static_cast<Eigen::Index>(pairs.size());
    points.resize(d, count);
    Eigen::Index c = 0;
    points.col(c++) = z;
    for (Eigen::Index p = 0; p < m; ++p) {
      for (double s : {1.0, -1.0}) {
        CVector w = z;
        shift(w, p, s * h);
        points.col(c++) = w;
      }
    }
    for (const auto& [p, q] : pairs) {
      for (double sp : {1.0, -1.0}) {
        for (double sq : {1.0, -1.0}) {
          CVector w = z;
          shift(w, p, sp * h);
          shift(w, q, sq * h);
          points.col(c++) = w;
        }
      }
    }
  }

  // values: rows = outputs, columns aligned with points. Returns the real
  // Hessian entries as complex vectors (one per output) in a dense m x m grid;
  // entries not covered by the stencil stay empty.
  std::vector<std::vector<CVector>> hessian(const CMatrix& values, double h) const {
    const Eigen::Index n = values.rows();
    std::vector<std::vector<CVector>> H(m, std::vector<CVector>(m));
    const CVector f0 = values.col(0);
    for (Eigen::Index p = 0; p < m; ++p) {
      H[p][p] = (values.col(1 + 2 * p) - 2.0 * f0 + values.col(2 + 2 * p)) / (h * h);
    }
    Eigen::Index c = 1 + 2 * m;
    for (const auto& [p, q] : pairs) {
      const CVector v = (values.col(c) - values.col(c + 1) - values.col(c + 2) + values.col(c + 3)) /
                        (4.0 * h * h);
      H[p][q] = v;
      H[q][p] = v;
      c += 4;
    }
    (void)n;
    return H;
  }
};

CMatrix scalar_values(const ScalarField& K, const CMatrix& points) {
  CMatrix v(1, points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) v(0, j) = K(points.col(j));
  return v;
}

double resolve_step(const CVector& z, std::optional<double> step) {
  const double h = step.value_or(default_fd_step(z));
  if (!(h > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be positive");
  return h;
}

}  // namespace

CMatrix ComplexMap::columns(const CMatrix& points) const {
  if (batched_) return batched_(points);
  CMatrix out;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const CVector v = single_(points.col(j));
    if (j == 0) out.resize(v.size(), points.cols());
    out.col(j) = v;
  }
  return out;
}

double default_fd_step(const CVector& z) {
  const double inf = z.size() ? z.cwiseAbs().maxCoeff() : 0.0;
  return 1e-4 * (1.0 + inf);
}

JacobianWithValue wirtinger_jacobian_at(const ComplexMap& f, const CVector& z,
                                        std::optional<double> step) {
  const double h = resolve_step(z, step);
  const Eigen::Index d = z.size();
  CMatrix points(d, 1 + 4 * d);
  points.col(0) = z;
  for (Eigen::Index p = 0; p < 2 * d; ++p) {
    CVector w = z;
    shift(w, p, h);
    points.col(1 + 2 * p) = w;
    w = z;
    shift(w, p, -h);
    points.col(2 + 2 * p) = w;
  }
  const CMatrix values = f.columns(points);
  require_finite(values);
  const Eigen::Index n = values.rows();
  JacobianWithValue out;
  out.value = values.col(0);
  out.jacobian.step = h;
  out.jacobian.d_z.resize(n, d);
  out.jacobian.d_zbar.resize(n, d);
  const cdouble I(0.0, 1.0);
  for (Eigen::Index a = 0; a < d; ++a) {
    const CVector fx = (values.col(1 + 2 * a) - values.col(2 + 2 * a)) / (2.0 * h);
    const CVector fy = (values.col(1 + 2 * (d + a)) - values.col(2 + 2 * (d + a))) / (2.0 * h);
    out.jacobian.d_z.col(a) = 0.5 * (fx - I * fy);
    out.jacobian.d_zbar.col(a) = 0.5 * (fx + I * fy);
  }
  return out;
}

WirtingerJacobian wirtinger_jacobian(const ComplexMap& f, const CVector& z,
                                     std::optional<double> step) {
  return wirtinger_jacobian_at(f, z, step).jacobian;
}

RMatrix real_hessian(const ScalarField& K, const CVector& z, double step) {
  const SecondOrderStencil st(z, step, false);
  const CMatrix values = scalar_values(K, st.points);
  require_finite(values);
  const auto H = st.hessian(values, step);
  RMatrix out(st.m, st.m);
  for (Eigen::Index p = 0; p < st.m; ++p)
    for (Eigen::Index q = 0; q < st.m; ++q) out(p, q) = H[p][q](0).real();
  return out;
}

HermitianMatrix levi_from_real_hessian(const RMatrix& H) {
  const Eigen::Index d = H.rows() / 2;
  CMatrix L(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      L(a, b) = 0.25 * cdouble(H(a, b) + H(d + a, d + b), H(d + a, b) - H(a, d + b));
    }
  }
  return HermitianMatrix(L);
}

HermitianMatrix mixed_hessian_scalar(const ScalarField& K, const CVector& z,
                                     std::optional<double> step) {
  return levi_from_real_hessian(real_hessian(K, z, resolve_step(z, step)));
}

RVector real_gradient(const ScalarField& K, const CVector& z, double step) {
  const Eigen::Index m = 2 * z.size();
  RVector g(m);
  for (Eigen::Index p = 0; p < m; ++p) {
    CVector zp = z, zm = z;
    shift(zp, p, step);
    shift(zm, p, -step);
    const double kp = K(zp), km = K(zm);
    if (!std::isfinite(kp) || !std::isfinite(km)) {
      throw Error(ErrorCode::kNonFiniteEvaluation, "scalar field returned NaN/Inf");
    }
    g(p) = (kp - km) / (2.0 * step);
  }
  return g;
}

std::vector<cdouble> pluriharmonic_entries(const ComplexMap& f, const CVector& z,
                                           std::optional<double> step, bool diagonal_only) {
  const double h = resolve_step(z, step);
  const Eigen::Index d = z.size();
  const SecondOrderStencil st(z, h, diagonal_only);
  const CMatrix values = f.columns(st.points);
  require_finite(values);
  const auto H = st.hessian(values, h);
  const Eigen::Index n = values.rows();
  const cdouble I(0.0, 1.0);
  std::vector<cdouble> out;
  // d/dz_a d/dzbar_b = (1/4)(dxa dxb + i dxa dyb - i dya dxb + dya dyb)
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b < d; ++b) {
      if (diagonal_only && a != b) continue;
      const CVector e = 0.25 * (H[a][b] + I * H[a][d + b] - I * H[d + a][b] + H[d + a][d + b]);
      for (Eigen::Index k = 0; k < n; ++k) out.push_back(e(k));
    }
  }
  return out;
}

double pluriharmonic_residual(const ComplexMap& f, const CVector& z, std::optional<double> step) {
  double worst = 0.0;
  for (cdouble e : pluriharmonic_entries(f, z, step)) worst = std::max(worst, std::abs(e));
  return worst;
}

}  // namespace kvae
