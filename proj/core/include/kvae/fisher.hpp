#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "kvae/cgaussian.hpp"
#include "kvae/metric.hpp"
#include "kvae/wirtinger.hpp"

namespace kvae {

// x | z ~ CN(mean_map(z), diag(cov_map(z))).
struct DecoderStatModel {
  ComplexMap mean_map;
  std::function<RVector(const CVector&)> cov_map;
  Eigen::Index latent_dim = 0;
  Eigen::Index data_dim = 0;

  ComplexGaussianParams at(const CVector& z) const;
};

// Pieces of the Fisher metric at z, all in the row-conjugated layout:
//   mean_holo  = J^H S^-1 J        (J = dmu/dz)
//   mean_anti  = Jt^H S^-1 Jt      (Jt = d conj(mu)/dz = conj(dmu/dzbar))
//   covariance = D^H D             (D = d log sigma / dz)
struct FisherTerms {
  HermitianMatrix mean_holo;
  HermitianMatrix mean_anti;
  HermitianMatrix covariance;

  HermitianMatrix exact() const { return mean_holo + mean_anti + covariance; }
  // Closed form with doubled mean constants: 2 Re(J^H S^-1 J) + D^H D.
  HermitianMatrix displayed() const;
};

FisherTerms fisher_terms(const DecoderStatModel& m, const CVector& z,
                         std::optional<double> fd_step = std::nullopt);

// E[conj(score) score^T], i.e. the Fisher information of CN(mu(z), Sigma(z))
// with respect to the Wirtinger score. Throws NotPSD if the assembled
// matrix leaves the PSD cone.
HermitianMetric exact_fisher_metric(const DecoderStatModel& m, const CVector& z,
                                    std::optional<double> fd_step = std::nullopt);
HermitianMetric displayed_fisher_metric(const DecoderStatModel& m, const CVector& z,
                                        std::optional<double> fd_step = std::nullopt);

HermitianMetric mc_fisher_estimate(const DecoderStatModel& m, const CVector& z, std::size_t samples,
                                   std::uint64_t seed, std::optional<double> fd_step = std::nullopt);

double kl_potential(const DecoderStatModel& m, const CVector& z_fixed, const CVector& z_var);
HermitianMetric kl_hessian_metric(const DecoderStatModel& m, const CVector& z,
                                  std::optional<double> fd_step = std::nullopt);

}  // namespace kvae
