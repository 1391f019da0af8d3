#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>

#include "kvae/cvae.hpp"
#include "kvae/error.hpp"

using namespace kvae;

namespace {

RMatrix toy_data(Eigen::Index n, Eigen::Index count, std::uint64_t seed) {
  Rng rng(seed);
  // Two blobs so the atlas is not degenerate.
  RMatrix x(n, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    const double c = (j % 2 == 0) ? 0.5 : -0.5;
    x.col(j) = RVector::Constant(n, c) + 0.2 * standard_normal(rng, n);
  }
  return x;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.learning_rate = 5e-3;
  cfg.seed = 9;
  cfg.atlas_size = 12;
  cfg.atlas_knn = 4;
  cfg.geometry_anchors = 6;
  cfg.metric_refresh_every = 5;
  return cfg;
}

}  // namespace

TEST(Encoder, ZeroModelIsStandardPrior) {
  const CVaeModel m({6, 2, 4});
  const ComplexGaussianParams p = encode(m, CVector::Ones(6));
  EXPECT_EQ(p.mu, CVector::Zero(2));
  EXPECT_LT((p.sigma - RVector::Ones(2)).norm(), 1e-15);
  EXPECT_LT(p.delta.norm(), 1e-15);
  EXPECT_EQ(decode(m, CVector::Ones(2)), CVector::Zero(6));
}

TEST(Encoder, RelationStaysInsideValidRegion) {
  Rng rng(1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const CVaeModel m = CVaeModel::random({5, 3, 8}, Activation::kSplitTanh, s, 3.0);
    const ComplexGaussianParams p = encode(m, 3.0 * standard_complex_normal(rng, 5));
    for (Eigen::Index k = 0; k < 3; ++k) EXPECT_LT(std::abs(p.delta(k)), std::sqrt(p.sigma(k)) + p.sigma(k));
    EXPECT_NO_THROW(p.validate());
  }
}

TEST(Model, ParameterLayout) {
  const CVaeModel m({5, 2, 3});
  // enc1 3x5, mu 2x3, u 2x3, dec1 3x2, dec2 5x3; 2*(out*in) + 2*out each.
  const Eigen::Index want = (30 + 6) + (12 + 4) + (12 + 4) + (12 + 6) + (30 + 10);
  EXPECT_EQ(m.parameter_count(), want);
  EXPECT_EQ(m.layer(CVaeModel::kDec2).offset + m.layer(CVaeModel::kDec2).size(), want);
}

TEST(Decoder, BatchedMatchesSingle) {
  Rng rng(2);
  const CVaeModel m = CVaeModel::random({4, 2, 6}, Activation::kSplitTanh, 3);
  CMatrix z(2, 5);
  for (Eigen::Index j = 0; j < 5; ++j) z.col(j) = standard_complex_normal(rng, 2);
  const CMatrix batch = decode_batch(m, z);
  const ComplexMap f = decoder_map(m);
  for (Eigen::Index j = 0; j < 5; ++j) {
    EXPECT_LT((batch.col(j) - decode(m, z.col(j))).norm(), 1e-14);
    EXPECT_LT((f(z.col(j)) - batch.col(j)).norm(), 1e-14);
  }
}

TEST(Loss, ZeroModelFixture) {
  // Decoder outputs 0 and the encoder outputs the prior, so
  // reconstruction = |X|^2 / B, KL = 0, and z = noise_im / 2 + i noise_re / 2.
  const CVaeModel m({4, 2, 3});
  const RMatrix X = toy_data(4, 8, 3);
  const Noise noise = Noise::draw(2, 8, 4);
  TrainConfig cfg;
  cfg.beta = 2.5;
  const GeometrySnapshot flat = GeometrySnapshot::flat();
  cfg.gamma = 0.7;
  const LossAndGradient r = loss_and_gradient(m, X, &flat, cfg, noise, false);
  EXPECT_NEAR(r.loss.reconstruction, X.squaredNorm() / 8.0, 1e-12);
  EXPECT_NEAR(r.loss.kl, 0.0, 1e-15);
  const double geo = 0.125 * (noise.re.squaredNorm() + noise.im.squaredNorm()) / 8.0;
  EXPECT_NEAR(r.loss.geometric, geo, 1e-12);
  EXPECT_NEAR(r.loss.total, r.loss.reconstruction + 0.7 * geo, 1e-12);
  EXPECT_EQ(r.eps_diag, 0.0);
}

TEST(Loss, TotalDecomposes) {
  const CVaeModel m = CVaeModel::random({4, 2, 5}, Activation::kSplitTanh, 5);
  const RMatrix X = toy_data(4, 10, 6);
  const Noise noise = Noise::draw(2, 10, 7);
  TrainConfig cfg;
  cfg.beta = 0.8;
  cfg.gamma = 0.3;
  const GeometrySnapshot flat = GeometrySnapshot::flat();
  const LossBreakdown l = loss_and_gradient(m, X, &flat, cfg, noise, false).loss;
  EXPECT_NEAR(l.total, l.reconstruction + 0.8 * l.kl + 0.3 * l.geometric, 1e-12);
  EXPECT_GE(l.kl, 0.0);
}

TEST(Loss, MissingAtlasWhenGeometryRequired) {
  const CVaeModel m({4, 2, 3});
  TrainConfig cfg;
  cfg.gamma = 0.1;
  try {
    loss(m, toy_data(4, 4, 1), nullptr, cfg, Noise::draw(2, 4, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingAtlas);
  }
}

TEST(Gradient, LinearModelMatchesFiniteDifference) {
  const CVaeModel m = CVaeModel::random({4, 2, 3}, Activation::kIdentity, 11);
  const RMatrix X = toy_data(4, 6, 12);
  TrainConfig cfg;
  cfg.beta = 1.0;
  const GradientCheckReport r = gradient_check(m, X, nullptr, cfg, 13, 60);
  EXPECT_LT(r.max_relative_error, 1e-5);
  EXPECT_EQ(r.checked, 60u);
}

TEST(Gradient, FullModelWithGeometryMatchesFiniteDifference) {
  const CVaeModel m = CVaeModel::random({4, 2, 5}, Activation::kSplitTanh, 14);
  const RMatrix X = toy_data(4, 20, 15);
  TrainConfig cfg = small_config();
  cfg.gamma = 0.1;
  const auto atlas = std::make_shared<const LatentAtlas>(build_atlas(m, X, cfg, 16));
  for (const LogDetMode mode : {LogDetMode::kFull, LogDetMode::kDiagonal}) {
    const GeometrySnapshot geo = GeometrySnapshot::exact(atlas, mode, cfg.fd_step, cfg.geometry_step);
    EXPECT_LT(gradient_check(m, X.leftCols(6), &geo, cfg, 17, 40).max_relative_error, 1e-4);
  }
}

TEST(Geometry, StoredSnapshotExactAtAnchors) {
  const CVaeModel m = CVaeModel::random({4, 2, 5}, Activation::kSplitTanh, 18);
  const RMatrix X = toy_data(4, 20, 19);
  const TrainConfig cfg = small_config();
  const auto atlas = std::make_shared<const LatentAtlas>(build_atlas(m, X, cfg, 20));
  Rng rng(21);
  const std::vector<CVector> anchors = {standard_complex_normal(rng, 2), standard_complex_normal(rng, 2)};
  const auto exact = GeometrySnapshot::exact(atlas, LogDetMode::kFull, cfg.fd_step, cfg.geometry_step);
  const auto stored = GeometrySnapshot::stored(atlas, LogDetMode::kFull, cfg.fd_step, cfg.geometry_step, anchors);
  EXPECT_EQ(stored.anchor_count(), 2u);
  for (const auto& a : anchors) EXPECT_NEAR(stored.log_det(a, nullptr), exact.log_det(a, nullptr), 1e-12);
  RVector g;
  EXPECT_EQ(GeometrySnapshot::flat().log_det(anchors[0], &g), 0.0);
  EXPECT_EQ(g.size(), 4);
  EXPECT_EQ(g.norm(), 0.0);
}

TEST(Ricci, PenaltyCases) {
  EXPECT_NEAR(ricci_penalty(CMatrix::Zero(3, 3)), std::sqrt(3.0) / 2.0, 1e-15);
  EXPECT_NEAR(ricci_penalty(cdouble(0.0, -1.0) * CMatrix::Identity(2, 2)), 0.0, 1e-15);
}

TEST(Ricci, TraceExpansionAgrees) {
  Rng rng(22);
  for (int t = 0; t < 50; ++t) {
    CMatrix r(3, 3);
    for (Eigen::Index j = 0; j < 3; ++j) r.col(j) = standard_complex_normal(rng, 3);
    EXPECT_NEAR(ricci_penalty(r), ricci_penalty_trace(r), 1e-12);
  }
}

TEST(Checkpoint, RoundTrip) {
  const CVaeModel m = CVaeModel::random({5, 2, 4}, Activation::kSplitTanh, 23);
  const CVaeModel back = deserialize_model(serialize_model(m));
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.dims().hidden, 4);
  EXPECT_EQ(back.activation(), m.activation());
  const auto path = (std::filesystem::temp_directory_path() / "kvae_test_checkpoint.cvae").string();
  save_checkpoint(m, path);
  EXPECT_EQ(load_checkpoint(path).params(), m.params());
  std::filesystem::remove(path);
  auto bytes = serialize_model(m);
  bytes[0] ^= 0x1;
  EXPECT_THROW(deserialize_model(bytes), Error);
}

TEST(Train, DeterministicAndDecreasing) {
  const RMatrix X = toy_data(6, 96, 24);
  const CVaeModel init = CVaeModel::random({6, 2, 8}, Activation::kSplitTanh, 25);
  TrainConfig cfg = small_config();
  cfg.epochs = 6;
  const TrainResult a = train(init, X, cfg);
  const TrainResult b = train(init, X, cfg);
  EXPECT_EQ(a.model.params(), b.model.params());
  ASSERT_EQ(a.log.size(), 6u);
  EXPECT_LT(a.log.back().total, a.log.front().total);
  EXPECT_NE(metrics_csv_rows(a.log).find("epoch,reconstruction"), std::string::npos);
}

TEST(Train, GeometricTermRefreshesAtlas) {
  const RMatrix X = toy_data(4, 48, 26);
  const CVaeModel init = CVaeModel::random({4, 2, 6}, Activation::kSplitTanh, 27);
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.gamma = 0.1;
  const TrainResult r = train(init, X, cfg);
  EXPECT_GE(r.refreshes, 2u);
  EXPECT_TRUE(r.atlas.has_value());
  for (const auto& e : r.log) EXPECT_TRUE(std::isfinite(e.total));
}
