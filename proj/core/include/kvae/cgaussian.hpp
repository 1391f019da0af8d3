#pragma once

#include <string_view>
#include <vector>

#include "kvae/linalg.hpp"
#include "kvae/rng.hpp"

namespace kvae {

// Diagonal complex normal CN(mu, diag(sigma), diag(delta)). sigma holds
// variances; delta is the per-coordinate relation (pseudo-covariance).
struct ComplexGaussianParams {
  CVector mu;
  RVector sigma;
  CVector delta;

  static ComplexGaussianParams circular(CVector mu, RVector sigma);
  Eigen::Index dim() const { return mu.size(); }
  bool is_circular() const;
  void validate() const;  // DimensionMismatch / InvalidArgument / InvalidRelation
};

struct MomentQuery {
  CMatrix A;  // plays M in the quadratic-form identities
  CMatrix B;  // plays N
  CVector a;
  CVector b;
};

enum class MomentIdentity {
  kMean,        // E[a^H v] = 0
  kCovariance,  // E[a^H v v^H b] = a^H Sigma b
  kQuadratic,   // E[v^H M v] = Tr(M Sigma)
  kQuartic,     // E[v^H M v v^H N v] = Tr(M Sigma N Sigma) + Tr(M Sigma) Tr(N Sigma)
  kSandwich,    // E[a^H v v^H M v v^H b] = a^H Sigma M Sigma b + (a^H Sigma b) Tr(M Sigma)
  kBilinear,    // E[a^H M v v^H N b] = a^H M Sigma N b
};

inline constexpr MomentIdentity kAllMomentIdentities[] = {
    MomentIdentity::kMean,    MomentIdentity::kCovariance, MomentIdentity::kQuadratic,
    MomentIdentity::kQuartic, MomentIdentity::kSandwich,   MomentIdentity::kBilinear};

MomentIdentity moment_identity_from_name(std::string_view name);  // UnknownIdentity
std::string_view moment_identity_name(MomentIdentity id);

struct MomentCheck {
  cdouble closed_form;
  cdouble mc_estimate;
  // sqrt((Var Re + Var Im) / N) of the per-draw statistic.
  double standard_error = 0.0;

  double z_score() const { return std::abs(mc_estimate - closed_form) / standard_error; }
};

double log_density(const ComplexGaussianParams& p, const CVector& x);

// Draws centred samples v (not x = mu + v when centred == true).
std::vector<CVector> sample(const ComplexGaussianParams& p, std::size_t count, Rng& rng,
                            bool centred = false);

MomentCheck moment_oracle(const ComplexGaussianParams& p, const MomentQuery& q,
                          MomentIdentity which, std::size_t mc_samples, Rng& rng);

double kl_complex_gaussian(const ComplexGaussianParams& p, const ComplexGaussianParams& q);
double kl_to_standard_prior(const ComplexGaussianParams& p);

struct Reparameterization {
  CVector psi_re;
  CVector psi_im;
};
Reparameterization reparameterization_coefficients(const ComplexGaussianParams& p);
CVector reparameterize(const ComplexGaussianParams& p, const RVector& eps_re,
                       const RVector& eps_im);

}  // namespace kvae
