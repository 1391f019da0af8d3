#include "kvae/fisher.hpp"

#include <cmath>
#include <string>

#include "kvae/error.hpp"
#include "parallel.hpp"

namespace kvae {

std::string_view provenance_name(MetricProvenance p) {
  switch (p) {
    case MetricProvenance::kExactFisher: return "exact-fisher";
    case MetricProvenance::kDisplayedFisher: return "displayed-fisher";
    case MetricProvenance::kKlHessian: return "kl-hessian";
    case MetricProvenance::kMonteCarlo: return "mc-fisher";
    case MetricProvenance::kMixture: return "mixture";
    case MetricProvenance::kProxy: return "proxy";
    case MetricProvenance::kDiagonal: return "diagonal";
  }
  return "?";
}

HermitianMetric HermitianMetric::diagonal_part() const {
  return {HermitianMatrix::diagonal(matrix.dense().diagonal().real()), MetricProvenance::kDiagonal, at};
}

ComplexGaussianParams DecoderStatModel::at(const CVector& z) const {
  if (z.size() != latent_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "latent point has wrong dimension");
  }
  ComplexGaussianParams p;
  p.mu = mean_map(z);
  p.sigma = cov_map(z);
  p.delta = CVector::Zero(p.mu.size());
  if (!p.mu.allFinite() || !p.sigma.allFinite()) {
    throw Error(ErrorCode::kNonFiniteEvaluation, "decoder statistics not finite");
  }
  if (p.mu.size() != data_dim || p.sigma.size() != data_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "decoder output has wrong dimension");
  }
  if ((p.sigma.array() <= 0.0).any()) {
    throw Error(ErrorCode::kInvalidArgument, "cov_map must be strictly positive");
  }
  return p;
}

HermitianMatrix FisherTerms::displayed() const {
  return HermitianMatrix(CMatrix(2.0 * mean_holo.real_part().cast<cdouble>())) + covariance;
}

FisherTerms fisher_terms(const DecoderStatModel& m, const CVector& z, std::optional<double> fd_step) {
  const ComplexGaussianParams p = m.at(z);
  const WirtingerJacobian jm = wirtinger_jacobian(m.mean_map, z, fd_step);
  const ComplexMap log_sigma([&m](const CVector& w) -> CVector {
    return m.cov_map(w).array().log().matrix().cast<cdouble>();
  });
  const WirtingerJacobian js = wirtinger_jacobian(log_sigma, z, fd_step);

  const RVector inv = p.sigma.cwiseInverse();
  const CMatrix J = jm.d_z;
  const CMatrix Jt = jm.conj_d_z();
  const CMatrix& D = js.d_z;
  return FisherTerms{HermitianMatrix(J.adjoint() * inv.cast<cdouble>().asDiagonal() * J),
                     HermitianMatrix(Jt.adjoint() * inv.cast<cdouble>().asDiagonal() * Jt),
                     HermitianMatrix(D.adjoint() * D)};
}

HermitianMetric exact_fisher_metric(const DecoderStatModel& m, const CVector& z,
                                    std::optional<double> fd_step) {
  HermitianMatrix h = fisher_terms(m, z, fd_step).exact();
  const double lo = min_eigenvalue(h);
  if (lo < -psd_tolerance(h)) {
    throw Error(ErrorCode::kNotPsd, "Fisher metric min eigenvalue " + std::to_string(lo));
  }
  return {std::move(h), MetricProvenance::kExactFisher, z};
}

HermitianMetric displayed_fisher_metric(const DecoderStatModel& m, const CVector& z,
                                        std::optional<double> fd_step) {
  return {fisher_terms(m, z, fd_step).displayed(), MetricProvenance::kDisplayedFisher, z};
}

HermitianMetric mc_fisher_estimate(const DecoderStatModel& m, const CVector& z, std::size_t samples,
                                   std::uint64_t seed, std::optional<double> fd_step) {
  if (samples == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  const Eigen::Index d = z.size();
  const double h = fd_step.value_or(default_fd_step(z));

  // Decoder statistics at the score stencil, evaluated once.
  const ComplexGaussianParams centre = m.at(z);
  std::vector<ComplexGaussianParams> plus(2 * d), minus(2 * d);
  for (Eigen::Index p = 0; p < 2 * d; ++p) {
    CVector zp = z, zm = z;
    const cdouble step = p < d ? cdouble(h, 0.0) : cdouble(0.0, h);
    zp(p % d) += step;
    zm(p % d) -= step;
    plus[p] = m.at(zp);
    minus[p] = m.at(zm);
  }

  constexpr std::size_t kShards = 16;
  const std::size_t shards = std::min<std::size_t>(kShards, samples);
  std::vector<CMatrix> partial(shards, CMatrix::Zero(d, d));
  detail::for_each_shard(shards, [&](std::size_t k) {
    const std::size_t begin = samples * k / shards;
    const std::size_t end = samples * (k + 1) / shards;
    Rng rng(derive_seed(seed, k));
    const cdouble I(0.0, 1.0);
    CVector score(d);
    for (std::size_t i = begin; i < end; ++i) {
      const CVector x = sample(centre, 1, rng).front();
      for (Eigen::Index a = 0; a < d; ++a) {
        const double lx = (log_density(plus[a], x) - log_density(minus[a], x)) / (2.0 * h);
        const double ly = (log_density(plus[d + a], x) - log_density(minus[d + a], x)) / (2.0 * h);
        score(a) = 0.5 * (lx - I * ly);
      }
      partial[k].noalias() += score.conjugate() * score.transpose();
    }
  });
  CMatrix sum = CMatrix::Zero(d, d);
  for (const auto& p : partial) sum += p;
  return {HermitianMatrix(sum / static_cast<double>(samples)), MetricProvenance::kMonteCarlo, z};
}

double kl_potential(const DecoderStatModel& m, const CVector& z_fixed, const CVector& z_var) {
  return kl_complex_gaussian(m.at(z_fixed), m.at(z_var));
}

HermitianMetric kl_hessian_metric(const DecoderStatModel& m, const CVector& z,
                                  std::optional<double> fd_step) {
  const ComplexGaussianParams fixed = m.at(z);
  HermitianMatrix h = mixed_hessian_scalar(
      [&](const CVector& w) { return kl_complex_gaussian(fixed, m.at(w)); }, z, fd_step);
  return {std::move(h), MetricProvenance::kKlHessian, z};
}

}  // namespace kvae
