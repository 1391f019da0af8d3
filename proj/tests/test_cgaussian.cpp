#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "kvae/cgaussian.hpp"
#include "kvae/error.hpp"

using namespace kvae;

namespace {

constexpr double kPi = std::numbers::pi;

ComplexGaussianParams random_params(Rng& rng, Eigen::Index n) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  RVector s(n);
  for (Eigen::Index k = 0; k < n; ++k) s(k) = u(rng);
  return ComplexGaussianParams::circular(standard_complex_normal(rng, n), s);
}

CMatrix random_matrix(Rng& rng, Eigen::Index n) {
  CMatrix m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) m.col(j) = standard_complex_normal(rng, n);
  return m;
}

// Closed forms written out independently of the library.
cdouble closed_form(MomentIdentity id, const CMatrix& S, const MomentQuery& q) {
  const CMatrix& M = q.A;
  const CMatrix& N = q.B;
  switch (id) {
    case MomentIdentity::kMean: return 0.0;
    case MomentIdentity::kCovariance: return q.a.dot(S * q.b);
    case MomentIdentity::kQuadratic: return (M * S).trace();
    case MomentIdentity::kQuartic: return (M * S * N * S).trace() + (M * S).trace() * (N * S).trace();
    case MomentIdentity::kSandwich: return q.a.dot(S * M * S * q.b) + q.a.dot(S * q.b) * (M * S).trace();
    case MomentIdentity::kBilinear: return q.a.dot(M * S * N * q.b);
  }
  return 0.0;
}

}  // namespace

TEST(LogDensity, AnalyticValues) {
  const auto p = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  EXPECT_NEAR(log_density(p, CVector::Zero(2)), -2.0 * std::log(kPi), 1e-14);
  CVector x(2);
  x << 1.0, cdouble(0.0, 1.0);
  EXPECT_NEAR(log_density(p, x), -2.0 - 2.0 * std::log(kPi), 1e-14);
}

TEST(LogDensity, RejectsRelationAndBadDims) {
  ComplexGaussianParams p = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  EXPECT_THROW(log_density(p, CVector::Zero(3)), Error);
  p.delta(0) = 0.1;
  try {
    log_density(p, CVector::Zero(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRelationNotSupported);
  }
}

TEST(LogDensity, IntegratesToOneOnComplexLine) {
  Rng rng(11);
  for (int t = 0; t < 3; ++t) {
    const ComplexGaussianParams p = random_params(rng, 1);
    const double s = std::sqrt(p.sigma(0));
    const double h = s / 40.0;
    double total = 0.0;
    for (double x = -10 * s; x <= 10 * s; x += h) {
      for (double y = -10 * s; y <= 10 * s; y += h) {
        CVector pt(1);
        pt(0) = p.mu(0) + cdouble(x, y);
        total += std::exp(log_density(p, pt)) * h * h;
      }
    }
    EXPECT_NEAR(total, 1.0, 1e-3);
  }
}

TEST(Sample, MomentsMatchParameters) {
  Rng rng(12);
  const auto p = ComplexGaussianParams::circular(CVector::Zero(2), (RVector(2) << 1.0, 4.0).finished());
  const std::size_t N = 1000000;
  const auto v = sample(p, N, rng, true);
  RVector m2 = RVector::Zero(2), m4 = RVector::Zero(2);
  CVector mean = CVector::Zero(2), pseudo = CVector::Zero(2);
  for (const auto& x : v) {
    m2 += x.cwiseAbs2();
    m4 += x.cwiseAbs2().cwiseAbs2();
    mean += x;
    pseudo += x.cwiseProduct(x);
  }
  for (Eigen::Index k = 0; k < 2; ++k) {
    const double var = m2(k) / N;
    const double se = std::sqrt((m4(k) / N - var * var) / N);
    EXPECT_NEAR(var, p.sigma(k), 3 * se);
    const double se_mean = std::sqrt(p.sigma(k) / N);
    EXPECT_LT(std::abs(mean(k) / double(N)), 3 * se_mean);
    // |v^2| has second moment E|v|^4 = 2 sigma^2
    EXPECT_LT(std::abs(pseudo(k) / double(N)), 3 * std::sqrt(2.0 * p.sigma(k) * p.sigma(k) / N));
  }
}

TEST(Moments, TrivialClosedForms) {
  Rng rng(13);
  const auto p3 = ComplexGaussianParams::circular(CVector::Zero(3), RVector::Ones(3));
  MomentQuery q3{CMatrix::Identity(3, 3), CMatrix::Identity(3, 3), CVector::Ones(3), CVector::Ones(3)};
  EXPECT_NEAR(std::abs(moment_oracle(p3, q3, MomentIdentity::kQuadratic, 1000, rng).closed_form - 3.0), 0.0, 1e-14);
  const auto p2 = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  MomentQuery q2{CMatrix::Identity(2, 2), CMatrix::Identity(2, 2), CVector::Ones(2), CVector::Ones(2)};
  EXPECT_NEAR(std::abs(moment_oracle(p2, q2, MomentIdentity::kQuartic, 1000, rng).closed_form - 6.0), 0.0, 1e-14);
}

TEST(Moments, ClosedFormsMatchIndependentFormulas) {
  Rng rng(14);
  for (const MomentIdentity id : kAllMomentIdentities) {
    const ComplexGaussianParams p = random_params(rng, 4);
    MomentQuery q{random_matrix(rng, 4), random_matrix(rng, 4), standard_complex_normal(rng, 4),
                  standard_complex_normal(rng, 4)};
    const CMatrix S = p.sigma.cast<cdouble>().asDiagonal();
    const cdouble got = moment_oracle(p, q, id, 10, rng).closed_form;
    const cdouble want = closed_form(id, S, q);
    EXPECT_LT(std::abs(got - want), 1e-12 * (1.0 + std::abs(want))) << moment_identity_name(id);
  }
}

TEST(Moments, MonteCarloWithinThreeStandardErrors) {
  Rng rng(15);
  for (const MomentIdentity id : kAllMomentIdentities) {
    const ComplexGaussianParams p = random_params(rng, 4);
    MomentQuery q{random_matrix(rng, 4), random_matrix(rng, 4), standard_complex_normal(rng, 4),
                  standard_complex_normal(rng, 4)};
    const MomentCheck c = moment_oracle(p, q, id, 1000000, rng);
    EXPECT_LE(c.z_score(), 3.0) << moment_identity_name(id);
  }
}

TEST(Moments, NamesRoundTripAndUnknownThrows) {
  for (const MomentIdentity id : kAllMomentIdentities) {
    EXPECT_EQ(moment_identity_from_name(moment_identity_name(id)), id);
  }
  try {
    moment_identity_from_name("sextic");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnknownIdentity);
  }
}

TEST(Kl, AnalyticValues) {
  const auto p = ComplexGaussianParams::circular((CVector(2) << 1.0, 0.0).finished(), RVector::Ones(2));
  const auto q = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  EXPECT_NEAR(kl_complex_gaussian(p, p), 0.0, 1e-15);
  EXPECT_NEAR(kl_complex_gaussian(p, q), 1.0, 1e-15);
  EXPECT_THROW(kl_complex_gaussian(p, ComplexGaussianParams::circular(CVector::Zero(3), RVector::Ones(3))), Error);
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(16);
  const ComplexGaussianParams p = random_params(rng, 2), q = random_params(rng, 2);
  const std::size_t N = 1000000;
  double s = 0.0, s2 = 0.0;
  for (const auto& x : sample(p, N, rng)) {
    const double r = log_density(p, x) - log_density(q, x);
    s += r;
    s2 += r * r;
  }
  const double mean = s / N;
  const double se = std::sqrt((s2 / N - mean * mean) / N);
  EXPECT_NEAR(kl_complex_gaussian(p, q), mean, 3 * se);
}

TEST(Kl, NonNegativeOverRandomPairs) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const ComplexGaussianParams p = random_params(rng, 3), q = random_params(rng, 3);
    EXPECT_GE(kl_complex_gaussian(p, q), 0.0);
    EXPECT_NEAR(kl_complex_gaussian(q, q), 0.0, 1e-13);
  }
}

TEST(KlPrior, PlugInValues) {
  const auto zero = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  EXPECT_NEAR(kl_to_standard_prior(zero), 0.0, 1e-15);
  const auto e1 = ComplexGaussianParams::circular((CVector(2) << 1.0, 0.0).finished(), RVector::Ones(2));
  EXPECT_NEAR(kl_to_standard_prior(e1), 1.0, 1e-15);
  const auto two = ComplexGaussianParams::circular(CVector::Zero(3), RVector::Constant(3, 2.0));
  EXPECT_NEAR(kl_to_standard_prior(two), 3.0 * std::abs(1.0 - std::log(2.0)), 1e-14);
}

TEST(KlPrior, RejectsInvalidRelation) {
  auto p = ComplexGaussianParams::circular(CVector::Zero(1), RVector::Ones(1));
  p.delta(0) = 1.0;
  try {
    kl_to_standard_prior(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidRelation);
  }
}

TEST(Reparameterize, CoefficientsAtCircularUnitVariance) {
  const auto p = ComplexGaussianParams::circular(CVector::Zero(2), RVector::Ones(2));
  const Reparameterization c = reparameterization_coefficients(p);
  for (Eigen::Index k = 0; k < 2; ++k) {
    EXPECT_NEAR(std::abs(c.psi_im(k) - cdouble(0.5, 0.0)), 0.0, 1e-15);
    EXPECT_NEAR(std::abs(c.psi_re(k) - cdouble(0.0, 0.5)), 0.0, 1e-15);
  }
}

TEST(Reparameterize, ZeroNoiseGivesMeanAndIsLinear) {
  Rng rng(18);
  ComplexGaussianParams p = random_params(rng, 3);
  p.delta = 0.3 * p.sigma.cast<cdouble>();
  EXPECT_EQ(reparameterize(p, RVector::Zero(3), RVector::Zero(3)), p.mu);
  const RVector a = standard_normal(rng, 3), b = standard_normal(rng, 3);
  const RVector c = standard_normal(rng, 3), d = standard_normal(rng, 3);
  const CVector lhs = reparameterize(p, 2.0 * a + c, 2.0 * b + d) - p.mu;
  const CVector rhs = 2.0 * (reparameterize(p, a, b) - p.mu) + (reparameterize(p, c, d) - p.mu);
  EXPECT_LT((lhs - rhs).norm(), 1e-12);
}

TEST(Reparameterize, SampleMeanIsCentred) {
  Rng rng(19);
  const auto p = ComplexGaussianParams::circular((CVector(1) << cdouble(0.3, -0.2)).finished(), RVector::Ones(1));
  const std::size_t N = 1000000;
  cdouble sum = 0.0;
  double s2 = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const CVector z = reparameterize(p, standard_normal(rng, 1), standard_normal(rng, 1));
    sum += z(0) - p.mu(0);
    s2 += std::norm(z(0) - p.mu(0));
  }
  const double se = std::sqrt(s2 / N / N);
  EXPECT_LT(std::abs(sum / double(N)), 3 * se);
}

TEST(Reparameterize, RejectsInvalidRelation) {
  auto p = ComplexGaussianParams::circular(CVector::Zero(1), RVector::Ones(1));
  p.delta(0) = cdouble(0.0, 1.5);
  EXPECT_THROW(reparameterize(p, RVector::Zero(1), RVector::Zero(1)), Error);
}
