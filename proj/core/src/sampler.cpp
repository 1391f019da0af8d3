#include "kvae/sampler.hpp"

#include <cmath>
#include <limits>

#include "kvae/error.hpp"
#include "parallel.hpp"

namespace kvae {

namespace {

// Uniform in [0, 1) from the top 53 bits; independent of the library's distributions.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

void SamplerConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (overdraw < 1) bad("overdraw must be >= 1");
  if (!(std::isfinite(alpha) && alpha >= 0)) bad("alpha must be >= 0");
  if (!(std::isfinite(lambda) && lambda >= 0)) bad("lambda must be >= 0");
  if (!(temperature > 0)) bad("temperature must be > 0");
  if (!(std::isfinite(jitter) && jitter > 0)) bad("jitter must be > 0");
  if (!(max_clamp_rate >= 0 && max_clamp_rate <= 1)) bad("max_clamp_rate must be in [0, 1]");
}

std::vector<CVector> SampleBatch::selected_points() const {
  std::vector<CVector> out;
  out.reserve(selected.size());
  for (std::size_t i : selected) out.push_back(candidates[i]);
  return out;
}

std::vector<std::size_t> multinomial_without_replacement(const RVector& probs, std::size_t k, Rng& rng) {
  std::size_t support = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (!(std::isfinite(probs(i)) && probs(i) >= 0)) {
      throw Error(ErrorCode::kInvalidArgument, "probabilities must be finite and non-negative");
    }
    if (probs(i) > 0) ++support;
  }
  if (k > support) {
    throw Error(ErrorCode::kInsufficientSupport,
                "k = " + std::to_string(k) + " exceeds support size " + std::to_string(support));
  }
  RVector w = probs;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    const double total = w.sum();
    const double u = uniform01(rng) * total;
    double acc = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      if (w(i) <= 0) continue;
      pick = i;  // last positive entry absorbs rounding at the top end
      acc += w(i);
      if (u < acc) break;
    }
    out.push_back(static_cast<std::size_t>(pick));
    w(pick) = 0.0;
  }
  return out;
}

RVector score_probabilities(const RVector& scores, double temperature) {
  const RVector u = (scores.array() - scores.mean()) / temperature;
  const double mx = u.maxCoeff();
  RVector e = (u.array() - mx).exp();
  return e / e.sum();
}

SampleBatch select_candidates(std::vector<CVector> candidates, const RVector& logdets,
                              const SamplerConfig& cfg, std::size_t count, Rng& rng, SamplerState* state) {
  cfg.validate();
  if (count > candidates.size()) {
    throw Error(ErrorCode::kInsufficientCandidates, std::to_string(candidates.size()) +
                                                        " candidates for " + std::to_string(count) + " samples");
  }
  if (logdets.size() != static_cast<Eigen::Index>(candidates.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "one log det per candidate");
  }
  SampleBatch b;
  b.candidates = std::move(candidates);
  b.logdets = logdets;
  RVector ell = logdets;
  if (cfg.normalize == NormalizeMode::kAccumulatedMean && state) {
    state->sum += logdets.sum();
    state->count += static_cast<std::size_t>(logdets.size());
    ell.array() -= state->mean();
  }
  const auto M = static_cast<Eigen::Index>(b.candidates.size());
  b.scores.resize(M);
  for (Eigen::Index j = 0; j < M; ++j) {
    b.scores(j) = -cfg.alpha * ell(j) * ell(j) - cfg.lambda * b.candidates[static_cast<std::size_t>(j)].squaredNorm();
  }
  if (M == 0) return b;
  b.probs = score_probabilities(b.scores, cfg.temperature);
  b.selected = multinomial_without_replacement(b.probs, count, rng);
  return b;
}

SampleBatch metric_sample(const CVaeModel& model, const LatentAtlas& atlas, const RMatrix& data_batch,
                          const SamplerConfig& cfg, std::size_t count, std::uint64_t seed, SamplerState* state) {
  cfg.validate();
  const auto B = static_cast<std::size_t>(data_batch.cols());
  const std::size_t M = static_cast<std::size_t>(cfg.overdraw) * count;
  if (B == 0 || M < count) {
    throw Error(ErrorCode::kInsufficientCandidates, "no data items to draw candidates from");
  }
  const EncoderBatch enc = encode_batch(model, data_batch.cast<cdouble>());
  const RMatrix sigma = (0.5 * enc.log_var.array()).exp();

  Rng rng(seed);
  std::vector<CVector> cand(M);
  for (std::size_t j = 0; j < M; ++j) {
    const auto i = static_cast<Eigen::Index>(j % B);
    const CVector eps = standard_complex_normal(rng, enc.mu.rows());
    cand[j] = enc.mu.col(i) + cfg.jitter * sigma.col(i).cast<cdouble>().cwiseProduct(eps);
  }

  RVector ell = RVector::Zero(static_cast<Eigen::Index>(M));
  std::size_t clamped = 0;
  if (cfg.alpha > 0) {
    std::vector<char> flags(M, 0);
    detail::for_each_shard(M, [&](std::size_t j) {
      const LogDetResult r = log_det_metric(atlas, cand[j], cfg.logdet_mode, cfg.fd_step);
      ell(static_cast<Eigen::Index>(j)) = r.value;
      flags[j] = r.clamped;
    });
    for (char f : flags) clamped += static_cast<std::size_t>(f);
    if (static_cast<double>(clamped) > cfg.max_clamp_rate * static_cast<double>(M)) {
      throw Error(ErrorCode::kClampRateExceeded, std::to_string(clamped) + " of " + std::to_string(M) +
                                                     " log-determinants clamped");
    }
  }
  SampleBatch b = select_candidates(std::move(cand), ell, cfg, count, rng, state);
  b.clamped = clamped;
  return b;
}

RVector volume_density_from_logdets(const RVector& logdets) {
  if (logdets.size() == 0) return logdets;
  const double mx = logdets.maxCoeff();
  if (!std::isfinite(mx)) throw Error(ErrorCode::kNotPd, "metric is degenerate on the whole grid");
  RVector e = (logdets.array() - mx).exp();
  return e / e.sum();
}

RVector volume_density(const LatentAtlas& atlas, const std::vector<CVector>& grid, std::optional<double> fd_step) {
  RVector ell(static_cast<Eigen::Index>(grid.size()));
  detail::for_each_shard(grid.size(), [&](std::size_t j) {
    ell(static_cast<Eigen::Index>(j)) = log_det_metric(atlas, grid[j], LogDetMode::kFull, fd_step).raw;
  });
  return volume_density_from_logdets(ell);
}

RVector volume_density(const MetricField& metric, const std::vector<CVector>& grid) {
  RVector ell(static_cast<Eigen::Index>(grid.size()));
  for (std::size_t j = 0; j < grid.size(); ++j) {
    try {
      ell(static_cast<Eigen::Index>(j)) = logdet(metric(grid[j]));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPd) throw;
      ell(static_cast<Eigen::Index>(j)) = -std::numeric_limits<double>::infinity();
    }
  }
  return volume_density_from_logdets(ell);
}

}  // namespace kvae
