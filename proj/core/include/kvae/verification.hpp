#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvae/fisher.hpp"
#include "kvae/kahler.hpp"

namespace kvae {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  std::uint64_t seed = 0;
  // Scratch space for experiment outputs (criteria 8 and 11).
  std::string work_dir = "acceptance_work";
  // Criterion 8 at smoke scale instead of the desk protocol. Only for quick
  // local runs; the verdict is then labelled accordingly.
  bool quick_outliers = false;
};

// Smooth non-holomorphic toy decoder: mu(z) = A z + B conj(z) + (P z) .* conj(Q z),
// log variance affine in (Re z, Im z) when varying_covariance.
DecoderStatModel random_stat_model(Eigen::Index latent_dim, Eigen::Index data_dim, std::uint64_t seed,
                                   bool varying_covariance);
// Random atlas around a pluriharmonic toy decoder. Means are decoder images
// of random latents plus noise, so the weights are not degenerate.
LatentAtlas random_atlas(Eigen::Index latent_dim, Eigen::Index data_dim, std::size_t components,
                         std::uint64_t seed, ExponentSign sign = ExponentSign::kNegative);

double relative_frobenius(const HermitianMatrix& a, const HermitianMatrix& reference);

CriterionResult criterion_mc_fisher(std::uint64_t seed);
CriterionResult criterion_kl_hessian(std::uint64_t seed);
CriterionResult criterion_mixture_identity(std::uint64_t seed);
CriterionResult criterion_psh(std::uint64_t seed);
CriterionResult criterion_single_component(std::uint64_t seed);
CriterionResult criterion_fisher_potential(std::uint64_t seed);
CriterionResult criterion_moments(std::uint64_t seed);
CriterionResult criterion_outlier_direction(const AcceptanceOptions& opt);
CriterionResult criterion_runtime(std::uint64_t seed);
CriterionResult criterion_gradient_gate(std::uint64_t seed);
CriterionResult criterion_determinism(const AcceptanceOptions& opt);

// Runs the selected criteria (all when `only` is empty) in id order.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt, const std::vector<int>& only = {});
std::string format_result(const CriterionResult& r);

}  // namespace kvae
