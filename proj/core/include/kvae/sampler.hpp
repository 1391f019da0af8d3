#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kvae/cvae.hpp"
#include "kvae/kahler.hpp"
#include "kvae/rng.hpp"

namespace kvae {

enum class NormalizeMode { kNone, kAccumulatedMean };

struct SamplerConfig {
  int overdraw = 4;
  double alpha = 0.0;   // weight on logdet^2
  double lambda = 0.0;  // weight on |z|^2
  double temperature = 1.0;
  double jitter = 1.0;
  NormalizeMode normalize = NormalizeMode::kNone;
  LogDetMode logdet_mode = LogDetMode::kDiagonal;
  double max_clamp_rate = 0.05;
  std::optional<double> fd_step;

  void validate() const;
};

// Running mean of log det h across batches, for NormalizeMode::kAccumulatedMean.
struct SamplerState {
  double sum = 0.0;
  std::size_t count = 0;
  double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
};

struct SampleBatch {
  std::vector<CVector> candidates;
  RVector logdets;  // raw scoring values before normalization
  RVector scores;
  RVector probs;
  std::vector<std::size_t> selected;
  std::size_t clamped = 0;

  std::vector<CVector> selected_points() const;
};

// Sequential draw-and-renormalize. Throws InsufficientSupport when fewer
// than k entries are positive.
std::vector<std::size_t> multinomial_without_replacement(const RVector& probs, std::size_t k, Rng& rng);

// softmax((w - mean w) / temperature)
RVector score_probabilities(const RVector& scores, double temperature);

// Scoring and selection over a fixed candidate set.
SampleBatch select_candidates(std::vector<CVector> candidates, const RVector& logdets,
                              const SamplerConfig& cfg, std::size_t count, Rng& rng,
                              SamplerState* state = nullptr);

// Full loop: encode the batch, overdraw jittered candidates (candidate j
// uses item j mod B), score by log det h, select `count` of them.
SampleBatch metric_sample(const CVaeModel& model, const LatentAtlas& atlas, const RMatrix& data_batch,
                          const SamplerConfig& cfg, std::size_t count, std::uint64_t seed,
                          SamplerState* state = nullptr);

// det h at each node normalized to sum 1.
RVector volume_density(const LatentAtlas& atlas, const std::vector<CVector>& grid,
                       std::optional<double> fd_step = std::nullopt);
RVector volume_density(const MetricField& metric, const std::vector<CVector>& grid);
RVector volume_density_from_logdets(const RVector& logdets);

}  // namespace kvae
