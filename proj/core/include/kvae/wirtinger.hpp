#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "kvae/linalg.hpp"

namespace kvae {

// A map C^d -> C^n. Optionally carries a batched form taking points as
// columns, which stencil code uses to evaluate all points in one call.
class ComplexMap {
 public:
  using Single = std::function<CVector(const CVector&)>;
  using Batched = std::function<CMatrix(const CMatrix&)>;

  ComplexMap() = default;
  ComplexMap(Single f) : single_(std::move(f)) {}  // NOLINT(implicit)
  ComplexMap(Single f, Batched g) : single_(std::move(f)), batched_(std::move(g)) {}

  explicit operator bool() const { return static_cast<bool>(single_); }
  CVector operator()(const CVector& z) const { return single_(z); }
  CMatrix columns(const CMatrix& points) const;

 private:
  Single single_;
  Batched batched_;
};

using ScalarField = std::function<double(const CVector&)>;

double default_fd_step(const CVector& z);

struct WirtingerJacobian {
  CMatrix d_z;     // n x d, df/dz
  CMatrix d_zbar;  // n x d, df/dzbar
  double step = 0.0;

  // Jacobian of conj(f) with respect to z: conj(df/dzbar).
  CMatrix conj_d_z() const { return d_zbar.conjugate(); }
};

struct JacobianWithValue {
  CVector value;
  WirtingerJacobian jacobian;
};

JacobianWithValue wirtinger_jacobian_at(const ComplexMap& f, const CVector& z,
                                        std::optional<double> step = std::nullopt);
WirtingerJacobian wirtinger_jacobian(const ComplexMap& f, const CVector& z,
                                     std::optional<double> step = std::nullopt);

// Levi matrix of a real K. Entry (a, b) is d^2K / dzbar_a dz_b, so that
// u^H H u is the Levi form and a pullback reads J^H S J.
HermitianMatrix mixed_hessian_scalar(const ScalarField& K, const CVector& z,
                                     std::optional<double> step = std::nullopt);

// Real-coordinate Hessian (2d x 2d, surrogate layout) by central differences.
RMatrix real_hessian(const ScalarField& K, const CVector& z, double step);
HermitianMatrix levi_from_real_hessian(const RMatrix& H);

// Central-difference gradient in real-surrogate layout.
RVector real_gradient(const ScalarField& K, const CVector& z, double step);

// All mixed second derivatives d^2 f_k / dz_a dzbar_b (k, a, b flattened).
std::vector<cdouble> pluriharmonic_entries(const ComplexMap& f, const CVector& z,
                                           std::optional<double> step = std::nullopt,
                                           bool diagonal_only = false);
double pluriharmonic_residual(const ComplexMap& f, const CVector& z,
                              std::optional<double> step = std::nullopt);

}  // namespace kvae
