#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kvae/fisher.hpp"
#include "kvae/metric.hpp"
#include "kvae/wirtinger.hpp"

namespace kvae {

struct AtlasComponent {
  double weight = 0.0;
  CVector mean;      // mu_i, data space
  RVector variance;  // diag Sigma_i
};

// Sign s in the component exponent log a_i + s * Psi_i / rho^2.
// kNegative gives Gaussian weights and is the default.
enum class ExponentSign { kNegative = -1, kPositive = 1 };

class LatentAtlas {
 public:
  LatentAtlas(std::vector<AtlasComponent> components, double rho, ComplexMap decoder,
              Eigen::Index latent_dim, ExponentSign sign = ExponentSign::kNegative,
              double gamma_floor = 1e-12);

  Eigen::Index size() const { return means_.cols(); }
  Eigen::Index data_dim() const { return means_.rows(); }
  Eigen::Index latent_dim() const { return latent_dim_; }
  double rho() const { return rho_; }
  ExponentSign sign() const { return sign_; }
  double gamma_floor() const { return gamma_floor_; }

  const CMatrix& means() const { return means_; }               // n x N
  const RMatrix& variances() const { return var_; }            // n x N
  const RMatrix& inv_variances() const { return inv_var_; }     // n x N
  const RVector& component_weights() const { return weights_; } // a_i
  const RVector& log_weights() const { return log_weights_; }   // N
  AtlasComponent component(Eigen::Index i) const;

  const ComplexMap& decoder() const;
  bool has_decoder() const { return static_cast<bool>(decoder_); }

  LatentAtlas with_decoder(ComplexMap decoder) const;
  LatentAtlas with_rho(double rho) const;
  LatentAtlas with_sign(ExponentSign sign) const;

 private:
  CMatrix means_;
  RMatrix var_;
  RMatrix inv_var_;
  RVector weights_;
  RVector log_weights_;
  double rho_;
  ComplexMap decoder_;
  Eigen::Index latent_dim_;
  ExponentSign sign_;
  double gamma_floor_;
};

// Median of pairwise sqrt(Psi) between component means (first 256 components).
double median_heuristic_rho(const std::vector<AtlasComponent>& components);

double quad_form(const LatentAtlas& atlas, Eigen::Index i, const CVector& z);
RVector quad_forms_at(const LatentAtlas& atlas, const CVector& x);
double potential(const LatentAtlas& atlas, const CVector& z);
RVector weights(const LatentAtlas& atlas, const CVector& z);
RVector weights_at(const LatentAtlas& atlas, const CVector& x);

struct MixtureMetricReport {
  HermitianMetric metric;
  RVector weights;
  HermitianMatrix expectation_term;  // E_w[ddbar Psi]
  HermitianMatrix covariance_term;   // Cov_w(dPsi, dbar Psi)
};

// E_w[ddbar Psi] + rho^-2 Cov_w(dPsi, dbar Psi), built from one shared
// Wirtinger Jacobian of the decoder.
MixtureMetricReport mixture_metric(const LatentAtlas& atlas, const CVector& z,
                                   std::optional<double> fd_step = std::nullopt);

// Closed form of ddbar potential(atlas, .) for either exponent sign:
// s * E_w[ddbar Psi] + rho^-2 Cov_w. Equals mixture_metric only for kPositive.
HermitianMatrix potential_levi_form(const LatentAtlas& atlas, const CVector& z,
                                    std::optional<double> fd_step = std::nullopt);

// Single entry h_ab of mixture_metric given the decoder value x and its
// Jacobians J = dx/dz, Jt = d conj(x)/dz at the query point. One pass over
// the atlas for the component statistics, one for the weighted precision.
cdouble mixture_metric_entry(const LatentAtlas& atlas, const CVector& x, const CMatrix& J,
                             const CMatrix& Jt, Eigen::Index a, Eigen::Index b);

// Exact nearest component by Euclidean distance between x and mu_i.
Eigen::Index nearest_component(const LatentAtlas& atlas, const CVector& x);

// Nearest-neighbour baseline for the Fisher entry h_aa: Sigma taken from the
// nearest component at x, and d log Sigma from nearest components at the
// four linearized stencil points x(z +- h e_a), x(z +- i h e_a).
double nn_fisher_entry(const LatentAtlas& atlas, const CVector& x, const CMatrix& J, const CMatrix& Jt,
                       Eigen::Index a, double h);

HermitianMetric high_rank_proxy(const LatentAtlas& atlas, const CVector& z,
                                const std::vector<CVector>& directions,
                                std::optional<double> fd_step = std::nullopt);
std::vector<CVector> canonical_directions(Eigen::Index n);

enum class LogDetMode { kFull, kDiagonal };

struct LogDetResult {
  double value = 0.0;  // clamped
  double raw = 0.0;    // -inf when the metric is not PD
  bool clamped = false;
};

inline constexpr double kLogDetClampLow = -40.0;
inline constexpr double kLogDetClampHigh = 40.0;

LogDetResult log_det_metric(const LatentAtlas& atlas, const CVector& z, LogDetMode mode,
                            std::optional<double> fd_step = std::nullopt);
LogDetResult clamp_log_det(double raw);

struct PshOptions {
  // Test hook: certify ddbar of this potential instead of the mixture metric.
  std::optional<ScalarField> potential_override;
  std::optional<double> fd_step;
};

struct PshReport {
  double min_eigenvalue = 0.0;
  double median_scale = 0.0;
  double threshold = 0.0;
  std::size_t worst_point = 0;
  bool passed = false;
};

PshReport psh_certificate(const LatentAtlas& atlas, const std::vector<CVector>& points,
                          const PshOptions& options = {});

// -ddbar log det h for an arbitrary metric field.
using MetricField = std::function<HermitianMatrix(const CVector&)>;
HermitianMatrix ricci_form(const MetricField& metric, const CVector& z,
                           std::optional<double> fd_step = std::nullopt);
HermitianMatrix ricci_logdet(const LatentAtlas& atlas, const CVector& z,
                             std::optional<double> fd_step = std::nullopt);
double default_ricci_step(const CVector& z);

struct AlignmentReport {
  double mean_cosine = 0.0;
  std::size_t fit_points = 0;
  std::size_t eval_points = 0;
  Eigen::Index rank = 0;  // rank of the design matrix
};

// Fits dv_alpha ~ M_alpha Sigma^-1 v on even-indexed points (v against the
// dominant component) and reports the mean cosine on the odd-indexed ones.
// A rank-deficient design throws DegenerateFit unless allow_rank_deficient,
// in which case the minimum-norm fit is used.
AlignmentReport jacobian_alignment(const LatentAtlas& atlas, const std::vector<CVector>& points,
                                   std::optional<double> fd_step = std::nullopt,
                                   bool allow_rank_deficient = false);

struct FisherPotentialIdentity {
  HermitianMatrix lhs;            // MC: E[ddbar Psi] + rho^-2 Cov(dPsi, dbar Psi)
  HermitianMatrix rhs;            // 2 rho^2 * exact Fisher
  HermitianMatrix rhs_displayed;  // rho^2 (4 Re(J^H S^-1 J) + 2 D^H D)
  double lhs_standard_error = 0.0;  // Frobenius-norm standard error of lhs
};

FisherPotentialIdentity fisher_potential_identity(const DecoderStatModel& model, const CVector& z,
                                                  std::size_t mc_samples, double rho, std::uint64_t seed,
                                                  std::optional<double> fd_step = std::nullopt);

// Binary (KATL) and text serialization. The decoder is not stored.
void save_atlas(const LatentAtlas& atlas, const std::string& path);
LatentAtlas load_atlas(const std::string& path, ComplexMap decoder = {});
std::vector<std::uint8_t> serialize_atlas(const LatentAtlas& atlas);
LatentAtlas deserialize_atlas(const std::vector<std::uint8_t>& bytes, ComplexMap decoder = {});
std::string atlas_to_text(const LatentAtlas& atlas);

}  // namespace kvae
