#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "kvae/error.hpp"
#include "kvae/sampler.hpp"

using namespace kvae;

namespace {

std::vector<CVector> grid_points(Eigen::Index count) {
  std::vector<CVector> pts;
  for (Eigen::Index j = 0; j < count; ++j) {
    CVector z(2);
    z << cdouble(0.1 * j, -0.05 * j), cdouble(0.02 * j, 0.3);
    pts.push_back(z);
  }
  return pts;
}

}  // namespace

TEST(Multinomial, DistinctIndicesFromSupport) {
  Rng rng(1);
  const RVector p = (RVector(5) << 0.1, 0.0, 0.4, 0.2, 0.3).finished();
  for (int t = 0; t < 100; ++t) {
    const auto s = multinomial_without_replacement(p, 4, rng);
    const std::set<std::size_t> u(s.begin(), s.end());
    EXPECT_EQ(u.size(), 4u);
    EXPECT_EQ(u.count(1), 0u);
  }
}

TEST(Multinomial, InsufficientSupportAndBadInput) {
  Rng rng(2);
  const RVector p = (RVector(3) << 0.5, 0.5, 0.0).finished();
  try {
    multinomial_without_replacement(p, 3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientSupport);
  }
  EXPECT_THROW(multinomial_without_replacement((RVector(2) << -0.1, 1.1).finished(), 1, rng), Error);
}

TEST(Multinomial, FirstDrawFrequencyMatchesProbabilities) {
  Rng rng(3);
  const RVector p = (RVector(4) << 0.1, 0.2, 0.3, 0.4).finished();
  const int N = 200000;
  RVector counts = RVector::Zero(4);
  for (int t = 0; t < N; ++t) counts(static_cast<Eigen::Index>(multinomial_without_replacement(p, 1, rng)[0])) += 1;
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double se = std::sqrt(p(i) * (1 - p(i)) / N);
    EXPECT_NEAR(counts(i) / N, p(i), 4 * se);
  }
}

TEST(Multinomial, SecondDrawRenormalizes) {
  // P(second = 2 | first = 0) = p2 / (1 - p0).
  Rng rng(4);
  const RVector p = (RVector(3) << 0.5, 0.2, 0.3).finished();
  int first0 = 0, second2 = 0;
  for (int t = 0; t < 200000; ++t) {
    const auto s = multinomial_without_replacement(p, 2, rng);
    if (s[0] == 0) {
      ++first0;
      second2 += s[1] == 2;
    }
  }
  const double want = 0.3 / 0.5;
  const double se = std::sqrt(want * (1 - want) / first0);
  EXPECT_NEAR(static_cast<double>(second2) / first0, want, 4 * se);
}

TEST(Scores, TemperatureFlattens) {
  const RVector s = (RVector(3) << 0.0, 1.0, 3.0).finished();
  const RVector cold = score_probabilities(s, 0.5), warm = score_probabilities(s, 5.0);
  EXPECT_NEAR(cold.sum(), 1.0, 1e-15);
  EXPECT_GT(cold(2), warm(2));
  EXPECT_LT(cold(0), warm(0));
  const RVector flat = score_probabilities(s, 1e12);
  EXPECT_LT((flat - RVector::Constant(3, 1.0 / 3)).norm(), 1e-9);
}

TEST(Scores, ShiftInvariantAndStable) {
  const RVector s = (RVector(3) << -2.0, 0.5, 1.0).finished();
  EXPECT_LT((score_probabilities(s, 1.0) - score_probabilities(s.array() + 1e6, 1.0)).norm(), 1e-9);
  const RVector huge = (RVector(2) << 1e300, -1e300).finished();
  EXPECT_TRUE(score_probabilities(huge, 1.0).allFinite());
}

TEST(Scores, PermutationEquivariant) {
  const RVector s = (RVector(4) << 0.3, -1.0, 2.0, 0.7).finished();
  const std::vector<Eigen::Index> perm = {2, 0, 3, 1};
  RVector sp(4);
  for (Eigen::Index i = 0; i < 4; ++i) sp(i) = s(perm[static_cast<std::size_t>(i)]);
  const RVector p = score_probabilities(s, 1.3), pp = score_probabilities(sp, 1.3);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(pp(i), p(perm[static_cast<std::size_t>(i)]), 1e-15);
}

TEST(Select, ZeroWeightsGiveUniform) {
  Rng rng(5);
  SamplerConfig cfg;
  const auto pts = grid_points(6);
  const SampleBatch b = select_candidates(pts, RVector::LinSpaced(6, -3, 3), cfg, 3, rng);
  EXPECT_LT((b.probs - RVector::Constant(6, 1.0 / 6)).norm(), 1e-15);
  EXPECT_EQ(b.selected.size(), 3u);
  EXPECT_EQ(b.selected_points().size(), 3u);
}

TEST(Select, LambdaPrefersSmallNorm) {
  Rng rng(6);
  const auto pts = grid_points(8);
  RVector norms(8);
  for (Eigen::Index j = 0; j < 8; ++j) norms(j) = pts[static_cast<std::size_t>(j)].squaredNorm();
  double last = -1.0;
  for (const double lambda : {0.0, 0.5, 2.0, 8.0}) {
    SamplerConfig cfg;
    cfg.lambda = lambda;
    const SampleBatch b = select_candidates(pts, RVector::Zero(8), cfg, 1, rng);
    // Probability mass on the smallest-norm candidate grows with lambda.
    Eigen::Index best = 0;
    norms.minCoeff(&best);
    EXPECT_GE(b.probs(best), last);
    last = b.probs(best);
  }
}

TEST(Select, AlphaPrefersSmallLogDetMagnitude) {
  Rng rng(7);
  SamplerConfig cfg;
  cfg.alpha = 1.0;
  const RVector ell = (RVector(4) << -3.0, 0.1, 2.0, -0.5).finished();
  const SampleBatch b = select_candidates(grid_points(4), ell, cfg, 1, rng);
  Eigen::Index top = 0;
  b.probs.maxCoeff(&top);
  EXPECT_EQ(top, 1);
  EXPECT_NEAR(b.scores(0), -9.0, 1e-15);
}

TEST(Select, AccumulatedMeanNormalization) {
  Rng rng(8);
  SamplerConfig cfg;
  cfg.alpha = 1.0;
  cfg.normalize = NormalizeMode::kAccumulatedMean;
  SamplerState state;
  select_candidates(grid_points(4), RVector::Constant(4, 2.0), cfg, 1, rng, &state);
  EXPECT_NEAR(state.mean(), 2.0, 1e-15);
  const SampleBatch b = select_candidates(grid_points(4), RVector::Constant(4, 4.0), cfg, 1, rng, &state);
  EXPECT_NEAR(state.mean(), 3.0, 1e-15);
  EXPECT_EQ(state.count, 8u);
  // scores use ell - 3 = 1
  EXPECT_NEAR(b.scores(0), -1.0, 1e-15);
  EXPECT_EQ(b.logdets(0), 4.0);
}

TEST(Select, InsufficientCandidates) {
  Rng rng(9);
  try {
    select_candidates(grid_points(2), RVector::Zero(2), SamplerConfig{}, 3, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientCandidates);
  }
}

TEST(Select, ConfigValidation) {
  SamplerConfig cfg;
  cfg.temperature = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = SamplerConfig{};
  cfg.overdraw = 0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(MetricSample, ClampRateExceeded) {
  // A near-zero decoder makes every log det fall below the clamp.
  const CVaeModel model({3, 2, 4});
  const ComplexMap tiny([](const CVector& z) { return CVector(1e-12 * CVector::Ones(3) * z.sum()); });
  const LatentAtlas atlas({{1.0, CVector::Zero(3), RVector::Ones(3)}}, 1.0, tiny, 2);
  SamplerConfig cfg;
  cfg.alpha = 1.0;
  cfg.logdet_mode = LogDetMode::kFull;
  try {
    metric_sample(model, atlas, RMatrix::Ones(3, 4), cfg, 4, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kClampRateExceeded);
  }
}

TEST(MetricSample, CandidatesCycleThroughBatch) {
  const CVaeModel model = CVaeModel::random({3, 2, 4}, Activation::kSplitTanh, 10);
  const ComplexMap dec = decoder_map(model);
  const LatentAtlas atlas({{1.0, CVector::Zero(3), RVector::Ones(3)}}, 1.0, dec, 2);
  SamplerConfig cfg;
  cfg.jitter = 1e-12;
  cfg.overdraw = 3;
  RMatrix batch(3, 2);
  batch << 1, -1, 0.5, 0.2, -0.3, 0.8;
  const SampleBatch b = metric_sample(model, atlas, batch, cfg, 2, 11);
  ASSERT_EQ(b.candidates.size(), 6u);
  const EncoderBatch enc = encode_batch(model, batch.cast<cdouble>());
  for (std::size_t j = 0; j < 6; ++j)
    EXPECT_LT((b.candidates[j] - enc.mu.col(static_cast<Eigen::Index>(j % 2))).norm(), 1e-9);
  const SampleBatch again = metric_sample(model, atlas, batch, cfg, 2, 11);
  EXPECT_EQ(again.selected, b.selected);
}

TEST(VolumeDensity, CasesAndNormalization) {
  const RVector v = volume_density_from_logdets((RVector(2) << 0.0, std::log(3.0)).finished());
  EXPECT_NEAR(v(0), 0.25, 1e-15);
  EXPECT_NEAR(v(1), 0.75, 1e-15);
  const MetricField conformal = [](const CVector& z) {
    return HermitianMatrix::diagonal(RVector::Constant(1, 1.0 + z.squaredNorm()));
  };
  std::vector<CVector> grid = {CVector::Zero(1), CVector::Ones(1)};
  const RVector d = volume_density(conformal, grid);
  EXPECT_NEAR(d(0), 1.0 / 3.0, 1e-14);
  const MetricField zero = [](const CVector&) { return HermitianMatrix::zero(1); };
  try {
    volume_density(zero, grid);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotPd);
  }
}

TEST(VolumeDensity, AtlasSingleComponentIsUniform) {
  const CMatrix A = (CMatrix(2, 2) << 1.0, 0.5, 0.0, 2.0).finished();
  const ComplexMap dec([A](const CVector& z) { return CVector(A * z); });
  const LatentAtlas atlas({{1.0, CVector::Zero(2), RVector::Ones(2)}}, 1.0, dec, 2);
  const RVector d = volume_density(atlas, grid_points(5));
  EXPECT_LT((d - RVector::Constant(5, 0.2)).norm(), 1e-7);
}
