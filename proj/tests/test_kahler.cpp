#include <gtest/gtest.h>

#include <cmath>

#include "kvae/error.hpp"
#include "kvae/kahler.hpp"
#include "kvae/verification.hpp"

using namespace kvae;

namespace {

CMatrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  CMatrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) m.col(j) = standard_complex_normal(rng, r);
  return m;
}

ComplexMap linear_decoder(const CMatrix& A) {
  return ComplexMap([A](const CVector& z) { return CVector(A * z); });
}

LatentAtlas single_component(const CMatrix& A, double rho = 1.0) {
  const Eigen::Index n = A.rows();
  return LatentAtlas({{1.0, CVector::Zero(n), RVector::Ones(n)}}, rho, linear_decoder(A), A.cols());
}

double naive_potential(const LatentAtlas& atlas, const CVector& z) {
  const double r2 = atlas.rho() * atlas.rho();
  const double s = static_cast<double>(static_cast<int>(atlas.sign()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < atlas.size(); ++i) {
    sum += atlas.component_weights()(i) * std::exp(s * quad_form(atlas, i, z) / r2);
  }
  return r2 * std::log(sum);
}

}  // namespace

TEST(Atlas, ConstructionValidates) {
  const ComplexMap dec = linear_decoder(CMatrix::Identity(2, 2));
  try {
    LatentAtlas({}, 1.0, dec, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyAtlas);
  }
  EXPECT_THROW(LatentAtlas({{0.5, CVector::Zero(2), RVector::Ones(2)}}, 1.0, dec, 2), Error);
  EXPECT_THROW(LatentAtlas({{1.0, CVector::Zero(2), RVector::Zero(2)}}, 1.0, dec, 2), Error);
  EXPECT_THROW(single_component(CMatrix::Identity(2, 2)).with_rho(0.0), Error);
}

TEST(Atlas, QuadFormMatchesManual) {
  Rng rng(1);
  const LatentAtlas atlas = random_atlas(2, 5, 6, 1);
  const CVector z = standard_complex_normal(rng, 2);
  const CVector x = atlas.decoder()(z);
  for (Eigen::Index i = 0; i < atlas.size(); ++i) {
    const AtlasComponent c = atlas.component(i);
    double want = 0.0;
    for (Eigen::Index k = 0; k < 5; ++k) want += std::norm(x(k) - c.mean(k)) / c.variance(k);
    EXPECT_NEAR(quad_form(atlas, i, z), want, 1e-12 * (1 + want));
  }
  EXPECT_THROW(quad_form(atlas, 6, z), Error);
}

TEST(Atlas, PotentialMatchesNaiveSum) {
  Rng rng(2);
  for (const ExponentSign s : {ExponentSign::kNegative, ExponentSign::kPositive}) {
    const LatentAtlas atlas = random_atlas(2, 4, 5, 2, s).with_rho(30.0);
    for (int t = 0; t < 5; ++t) {
      const CVector z = 0.3 * standard_complex_normal(rng, 2);
      const double want = naive_potential(atlas, z);
      EXPECT_NEAR(potential(atlas, z), want, 1e-9 * (1 + std::abs(want)));
    }
  }
}

TEST(Atlas, SingleComponentPotentialCollapses) {
  Rng rng(3);
  const LatentAtlas atlas = single_component(random_matrix(rng, 3, 2), 2.0);
  const CVector z = standard_complex_normal(rng, 2);
  EXPECT_NEAR(potential(atlas, z), -quad_form(atlas, 0, z), 1e-12);
  EXPECT_NEAR(potential(atlas.with_sign(ExponentSign::kPositive), z), quad_form(atlas, 0, z), 1e-12);
}

TEST(Weights, UniformWhenMeansCoincide) {
  const ComplexMap dec = linear_decoder(CMatrix::Identity(2, 2));
  std::vector<AtlasComponent> comps(4, {0.25, CVector::Zero(2), RVector::Ones(2)});
  const LatentAtlas atlas(comps, 1.0, dec, 2);
  const RVector w = weights(atlas, CVector::Constant(2, 0.7));
  EXPECT_LT((w - RVector::Constant(4, 0.25)).norm(), 1e-14);
}

TEST(Weights, SaturateWithoutOverflow) {
  const ComplexMap dec = linear_decoder(CMatrix::Identity(1, 1));
  std::vector<AtlasComponent> comps = {{0.5, CVector::Zero(1), RVector::Ones(1)},
                                       {0.5, CVector::Constant(1, 1e3), RVector::Ones(1)}};
  const LatentAtlas atlas(comps, 1.0, dec, 1);
  const RVector w = weights(atlas, CVector::Zero(1));
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w(0), 1.0, 1e-15);
  EXPECT_TRUE(std::isfinite(potential(atlas, CVector::Zero(1))));
}

TEST(Weights, SimplexOnRandomAtlases) {
  Rng rng(4);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LatentAtlas atlas = random_atlas(2, 4, 8, s);
    const RVector w = weights(atlas, standard_complex_normal(rng, 2));
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
    EXPECT_GE(w.minCoeff(), 0.0);
  }
}

TEST(MixtureMetric, SingleComponentIsPullback) {
  Rng rng(5);
  const CMatrix A = random_matrix(rng, 4, 2);
  const LatentAtlas atlas = single_component(A);
  const MixtureMetricReport r = mixture_metric(atlas, standard_complex_normal(rng, 2));
  const CMatrix want = A.adjoint() * A;
  EXPECT_LT((r.metric.matrix.dense() - want).norm() / want.norm(), 1e-7);
  EXPECT_LT(r.covariance_term.frobenius_norm(), 1e-8);
}

TEST(MixtureMetric, PositiveSignMatchesFiniteDifferenceLevi) {
  Rng rng(6);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const LatentAtlas atlas = random_atlas(2, 4, 6, 10 + s, ExponentSign::kPositive);
    const CVector z = 0.3 * standard_complex_normal(rng, 2);
    const HermitianMatrix fd = mixed_hessian_scalar([&](const CVector& w) { return potential(atlas, w); }, z);
    EXPECT_LT(relative_frobenius(mixture_metric(atlas, z).metric.matrix, fd), 1e-5);
    EXPECT_LT(relative_frobenius(potential_levi_form(atlas, z), fd), 1e-5);
  }
}

TEST(MixtureMetric, SignedClosedFormMatchesFiniteDifference) {
  Rng rng(7);
  const LatentAtlas atlas = random_atlas(2, 4, 6, 20, ExponentSign::kNegative);
  const CVector z = 0.3 * standard_complex_normal(rng, 2);
  const HermitianMatrix fd = mixed_hessian_scalar([&](const CVector& w) { return potential(atlas, w); }, z);
  EXPECT_LT(relative_frobenius(potential_levi_form(atlas, z), fd), 1e-5);
}

TEST(MixtureMetric, TermsArePsdAndSumToMetric) {
  Rng rng(8);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LatentAtlas atlas = random_atlas(3, 5, 7, 30 + s);
    const MixtureMetricReport r = mixture_metric(atlas, standard_complex_normal(rng, 3));
    EXPECT_TRUE(is_psd(r.expectation_term));
    EXPECT_TRUE(is_psd(r.covariance_term));
    const double r2 = atlas.rho() * atlas.rho();
    const HermitianMatrix sum = r.expectation_term + r.covariance_term * (1.0 / r2);
    EXPECT_LT(relative_frobenius(r.metric.matrix, sum), 1e-12);
  }
}

TEST(MixtureMetric, EntryMatchesFullMatrix) {
  Rng rng(9);
  const LatentAtlas atlas = random_atlas(3, 5, 9, 40);
  const CVector z = standard_complex_normal(rng, 3);
  const JacobianWithValue jv = wirtinger_jacobian_at(atlas.decoder(), z);
  const HermitianMatrix full = mixture_metric(atlas, z).metric.matrix;
  for (Eigen::Index a = 0; a < 3; ++a) {
    for (Eigen::Index b = 0; b < 3; ++b) {
      const cdouble e =
          mixture_metric_entry(atlas, jv.value, jv.jacobian.d_z, jv.jacobian.conj_d_z(), a, b);
      EXPECT_LT(std::abs(e - full(a, b)), 1e-10 * full.frobenius_norm());
    }
  }
}

TEST(NearestNeighbour, ConstantVarianceGivesMeanTerm) {
  Rng rng(10);
  const CMatrix A = random_matrix(rng, 3, 2);
  const ComplexMap dec = linear_decoder(A);
  std::vector<AtlasComponent> comps = {{0.5, CVector::Zero(3), RVector::Constant(3, 2.0)},
                                       {0.5, CVector::Constant(3, 50.0), RVector::Constant(3, 2.0)}};
  const LatentAtlas atlas(comps, 1.0, dec, 2);
  const CVector z = 0.1 * standard_complex_normal(rng, 2);
  const CVector x = A * z;
  EXPECT_EQ(nearest_component(atlas, x), 0);
  const CMatrix Jt = CMatrix::Zero(3, 2);
  for (Eigen::Index a = 0; a < 2; ++a) {
    EXPECT_NEAR(nn_fisher_entry(atlas, x, A, Jt, a, 1e-4), A.col(a).squaredNorm() / 2.0, 1e-12);
  }
}

TEST(Proxy, PsdRankAndScaling) {
  Rng rng(11);
  const LatentAtlas atlas = random_atlas(3, 5, 6, 50);
  const CVector z = standard_complex_normal(rng, 3);
  const HermitianMatrix full = high_rank_proxy(atlas, z, canonical_directions(5)).matrix;
  EXPECT_GE(min_eigenvalue(full), -1e-10 * full.frobenius_norm());
  const std::vector<CVector> one = {standard_complex_normal(rng, 5)};
  const HermitianMatrix r1 = high_rank_proxy(atlas, z, one).matrix;
  EXPECT_LE((eigenvalues(r1).array() > 1e-9 * r1.frobenius_norm()).count(), 1);
  try {
    high_rank_proxy(atlas, z, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDirections);
  }
}

TEST(Proxy, SingleComponentScalesWithRhoSquared) {
  Rng rng(12);
  const CMatrix A = random_matrix(rng, 3, 2);
  const CVector z = standard_complex_normal(rng, 2);
  const auto dirs = canonical_directions(3);
  const HermitianMatrix p1 = high_rank_proxy(single_component(A, 1.0), z, dirs).matrix;
  const HermitianMatrix p3 = high_rank_proxy(single_component(A, 3.0), z, dirs).matrix;
  EXPECT_LT(relative_frobenius(p3, p1 * 9.0), 1e-10);
  // With identity whitening and all data directions: rho^2 A^H A / n.
  const CMatrix want = A.adjoint() * A / 3.0;
  EXPECT_LT((p1.dense() - want).norm() / want.norm(), 1e-7);
}

TEST(LogDet, ClampBounds) {
  EXPECT_FALSE(clamp_log_det(1.0).clamped);
  EXPECT_EQ(clamp_log_det(100.0).value, kLogDetClampHigh);
  const LogDetResult r = clamp_log_det(-std::numeric_limits<double>::infinity());
  EXPECT_TRUE(r.clamped);
  EXPECT_EQ(r.value, kLogDetClampLow);
}

TEST(LogDet, SingleComponentAnalytic) {
  const CMatrix A = (CMatrix(2, 2) << 2.0, 0.0, 0.0, 3.0).finished();
  const LatentAtlas atlas = single_component(A);
  const CVector z = CVector::Constant(2, 0.2);
  EXPECT_NEAR(log_det_metric(atlas, z, LogDetMode::kFull).value, std::log(36.0), 1e-6);
  EXPECT_NEAR(log_det_metric(atlas, z, LogDetMode::kDiagonal).value, std::log(36.0), 1e-6);
}

TEST(LogDet, DiagonalBoundsFull) {
  // Hadamard: det h <= prod h_aa for PD h.
  Rng rng(13);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const LatentAtlas atlas = random_atlas(3, 5, 6, 60 + s);
    const CVector z = standard_complex_normal(rng, 3);
    const LogDetResult full = log_det_metric(atlas, z, LogDetMode::kFull);
    const LogDetResult diag = log_det_metric(atlas, z, LogDetMode::kDiagonal);
    EXPECT_LE(full.raw, diag.raw + 1e-9);
  }
}

TEST(Psh, MixtureMetricPassesAndConcaveControlFails) {
  Rng rng(14);
  const LatentAtlas atlas = random_atlas(2, 4, 6, 70);
  std::vector<CVector> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(standard_complex_normal(rng, 2));
  EXPECT_TRUE(psh_certificate(atlas, pts).passed);
  PshOptions bad;
  bad.potential_override = [](const CVector& z) { return -z.squaredNorm(); };
  const PshReport r = psh_certificate(atlas, pts, bad);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.min_eigenvalue, -1.0, 1e-5);
}

TEST(Ricci, ConstantMetricIsFlat) {
  const MetricField flat = [](const CVector&) { return HermitianMatrix::identity(2); };
  EXPECT_LT(ricci_form(flat, CVector::Constant(2, 0.3)).frobenius_norm(), 1e-8);
}

TEST(Ricci, ExponentialConformalFactor) {
  // log det = |z|^2, so -ddbar log det = -1.
  const MetricField h = [](const CVector& z) {
    return HermitianMatrix::diagonal(RVector::Constant(1, std::exp(z.squaredNorm())));
  };
  CVector z(1);
  z(0) = cdouble(0.2, -0.1);
  EXPECT_NEAR(ricci_form(h, z)(0, 0).real(), -1.0, 1e-4);
}

TEST(Ricci, SingleLinearComponentIsFlat) {
  Rng rng(15);
  const LatentAtlas atlas = single_component(random_matrix(rng, 3, 2));
  EXPECT_LT(ricci_logdet(atlas, standard_complex_normal(rng, 2)).frobenius_norm(), 1e-4);
}

TEST(JacobianAlignment, PlantedStructureGivesUnitCosine) {
  // x_k = exp(c_k . z): dx/dz_a = diag(c_{.a}) x, exactly linear in Sigma^-1 v.
  Rng rng(16);
  const CMatrix C = 0.3 * random_matrix(rng, 4, 2);
  const ComplexMap dec([C](const CVector& z) { return CVector((C * z).array().exp().matrix()); });
  const LatentAtlas atlas({{1.0, CVector::Zero(4), RVector::Ones(4)}}, 1.0, dec, 2);
  std::vector<CVector> pts;
  for (int i = 0; i < 40; ++i) pts.push_back(standard_complex_normal(rng, 2));
  const AlignmentReport r = jacobian_alignment(atlas, pts);
  EXPECT_EQ(r.rank, 4);
  EXPECT_NEAR(r.mean_cosine, 1.0, 1e-6);
}

TEST(JacobianAlignment, RankDeficientDesignThrows) {
  Rng rng(17);
  const LatentAtlas atlas = single_component(random_matrix(rng, 6, 2));
  std::vector<CVector> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(standard_complex_normal(rng, 2));
  try {
    jacobian_alignment(atlas, pts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateFit);
  }
  EXPECT_EQ(jacobian_alignment(atlas, pts, std::nullopt, true).rank, 2);
}

TEST(FisherPotential, IdentityDecoderRightHandSides) {
  DecoderStatModel m;
  m.latent_dim = 2;
  m.data_dim = 2;
  m.mean_map = ComplexMap([](const CVector& z) { return z; });
  m.cov_map = [](const CVector&) { return RVector(RVector::Ones(2)); };
  for (const double rho : {1.0, 2.0}) {
    const FisherPotentialIdentity a = fisher_potential_identity(m, CVector::Zero(2), 100, rho, 1);
    EXPECT_LT((a.rhs.dense() - 2.0 * rho * rho * CMatrix::Identity(2, 2)).norm(), 1e-6);
    EXPECT_LT((a.rhs_displayed.dense() - 4.0 * rho * rho * CMatrix::Identity(2, 2)).norm(), 1e-6);
  }
}

TEST(Serialization, BinaryRoundTrip) {
  const LatentAtlas atlas = random_atlas(2, 4, 5, 80, ExponentSign::kPositive);
  const auto bytes = serialize_atlas(atlas);
  const LatentAtlas back = deserialize_atlas(bytes, atlas.decoder());
  EXPECT_EQ(back.means(), atlas.means());
  EXPECT_EQ(back.variances(), atlas.variances());
  EXPECT_EQ(back.component_weights(), atlas.component_weights());
  EXPECT_EQ(back.rho(), atlas.rho());
  EXPECT_EQ(back.sign(), atlas.sign());
  EXPECT_EQ(back.latent_dim(), atlas.latent_dim());
  EXPECT_EQ(serialize_atlas(back), bytes);
  EXPECT_FALSE(atlas_to_text(atlas).empty());
}

TEST(Serialization, CorruptInputRejected) {
  auto bytes = serialize_atlas(random_atlas(2, 4, 5, 81));
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xFF;
  try {
    deserialize_atlas(bad_magic);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadMagic);
  }
  bytes.resize(bytes.size() / 2);
  try {
    deserialize_atlas(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncatedFile);
  }
}
