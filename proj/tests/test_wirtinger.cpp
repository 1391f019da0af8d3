#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "kvae/error.hpp"
#include "kvae/rng.hpp"
#include "kvae/wirtinger.hpp"

using namespace kvae;

namespace {

CMatrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  CMatrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) m.col(j) = standard_complex_normal(rng, r);
  return m;
}

}  // namespace

TEST(Jacobian, IdentityMap) {
  Rng rng(1);
  const CVector z = standard_complex_normal(rng, 3);
  const WirtingerJacobian j = wirtinger_jacobian(ComplexMap([](const CVector& v) { return v; }), z);
  EXPECT_LT((j.d_z - CMatrix::Identity(3, 3)).norm(), 1e-8);
  EXPECT_LT(j.d_zbar.norm(), 1e-8);
}

TEST(Jacobian, ConjugateMap) {
  Rng rng(2);
  const CVector z = standard_complex_normal(rng, 2);
  const WirtingerJacobian j =
      wirtinger_jacobian(ComplexMap([](const CVector& v) { return CVector(v.conjugate()); }), z);
  EXPECT_LT(j.d_z.norm(), 1e-8);
  EXPECT_LT((j.d_zbar - CMatrix::Identity(2, 2)).norm(), 1e-8);
  EXPECT_LT((j.conj_d_z() - CMatrix::Identity(2, 2)).norm(), 1e-8);
}

TEST(Jacobian, AffineMapRecoversBothParts) {
  Rng rng(3);
  const CMatrix A = random_matrix(rng, 4, 3), B = random_matrix(rng, 4, 3);
  const ComplexMap f([&](const CVector& v) { return CVector(A * v + B * v.conjugate()); });
  const CVector z = standard_complex_normal(rng, 3);
  const JacobianWithValue jv = wirtinger_jacobian_at(f, z);
  EXPECT_LT((jv.value - f(z)).norm(), 1e-14);
  EXPECT_LT((jv.jacobian.d_z - A).norm() / A.norm(), 1e-8);
  EXPECT_LT((jv.jacobian.d_zbar - B).norm() / B.norm(), 1e-8);
}

TEST(Jacobian, BatchedAndSingleAgree) {
  Rng rng(4);
  const CMatrix A = random_matrix(rng, 2, 2);
  const ComplexMap single([&](const CVector& v) { return CVector((A * v).cwiseAbs2().cast<cdouble>()); });
  const ComplexMap batched([&](const CVector& v) { return CVector((A * v).cwiseAbs2().cast<cdouble>()); },
                           [&](const CMatrix& pts) { return CMatrix((A * pts).cwiseAbs2().cast<cdouble>()); });
  const CVector z = standard_complex_normal(rng, 2);
  const auto a = wirtinger_jacobian(single, z), b = wirtinger_jacobian(batched, z);
  EXPECT_LT((a.d_z - b.d_z).norm(), 1e-12);
  EXPECT_LT((a.d_zbar - b.d_zbar).norm(), 1e-12);
}

TEST(MixedHessian, SquaredNormIsIdentity) {
  Rng rng(5);
  const CVector z = standard_complex_normal(rng, 3);
  const HermitianMatrix h = mixed_hessian_scalar([](const CVector& v) { return v.squaredNorm(); }, z);
  EXPECT_LT((h.dense() - CMatrix::Identity(3, 3)).norm(), 1e-6);
}

TEST(MixedHessian, RealPartSquaredIsOneHalf) {
  // (Re z)^2 = (z + zbar)^2 / 4, so d2/dz dzbar = 1/2.
  CVector z(1);
  z(0) = cdouble(0.7, -0.4);
  const HermitianMatrix h = mixed_hessian_scalar([](const CVector& v) { return v(0).real() * v(0).real(); }, z);
  EXPECT_NEAR(h(0, 0).real(), 0.5, 1e-6);
  EXPECT_NEAR(h(0, 0).imag(), 0.0, 1e-12);
}

TEST(MixedHessian, HermitianQuadraticFormConvention) {
  // K = z^H P z has Levi matrix with entry (a, b) = P(a, b).
  Rng rng(6);
  const CMatrix G = random_matrix(rng, 3, 3);
  const CMatrix P = G.adjoint() * G;
  const CVector z = standard_complex_normal(rng, 3);
  const HermitianMatrix h = mixed_hessian_scalar([&](const CVector& v) { return v.dot(P * v).real(); }, z);
  EXPECT_LT((h.dense() - P).norm() / P.norm(), 1e-6);
  const RMatrix H = real_hessian([&](const CVector& v) { return v.dot(P * v).real(); }, z, 1e-4);
  EXPECT_LT((levi_from_real_hessian(H).dense() - P).norm() / P.norm(), 1e-6);
}

TEST(RealGradient, LinearFunctional) {
  Rng rng(7);
  const CVector c = standard_complex_normal(rng, 2);
  const CVector z = standard_complex_normal(rng, 2);
  // Re(c^H z) = sum Re(c)Re(z) + Im(c)Im(z)
  const RVector g = real_gradient([&](const CVector& v) { return c.dot(v).real(); }, z, 1e-5);
  const RVector want = to_real(c);
  EXPECT_LT((g - want).norm(), 1e-9);
}

TEST(Pluriharmonic, HolomorphicAndAntiHolomorphicVanish) {
  Rng rng(8);
  const CMatrix A = random_matrix(rng, 3, 2);
  const CVector z = standard_complex_normal(rng, 2);
  const ComplexMap holo([&](const CVector& v) {
    CVector w = A * v;
    return CVector(w.cwiseProduct(w) + A * v.conjugate());
  });
  EXPECT_LT(pluriharmonic_residual(holo, z), 1e-5);
}

TEST(Pluriharmonic, NonPluriharmonicDetected) {
  CVector z(1);
  z(0) = cdouble(0.3, 0.2);
  // f = |z|^2 has d2f/dz dzbar = 1.
  const ComplexMap f([](const CVector& v) {
    CVector out(1);
    out(0) = std::norm(v(0));
    return out;
  });
  const auto e = pluriharmonic_entries(f, z);
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NEAR(std::abs(e[0] - 1.0), 0.0, 1e-5);
  EXPECT_NEAR(pluriharmonic_residual(f, z), 1.0, 1e-5);
}

TEST(Pluriharmonic, DiagonalOnlySubset) {
  Rng rng(9);
  const CVector z = standard_complex_normal(rng, 3);
  const ComplexMap f([](const CVector& v) {
    CVector out(1);
    out(0) = v.squaredNorm();
    return out;
  });
  EXPECT_EQ(pluriharmonic_entries(f, z, std::nullopt, true).size(), 3u);
  EXPECT_EQ(pluriharmonic_entries(f, z).size(), 9u);
}

TEST(FiniteDifference, CentralStencilConvergesQuadratically) {
  CVector z(1);
  z(0) = cdouble(0.4, 0.9);
  const ComplexMap f([](const CVector& v) {
    CVector out(1);
    out(0) = std::exp(v(0)) * std::conj(v(0));
    return out;
  });
  const cdouble exact = std::exp(z(0)) * std::conj(z(0));
  const double e1 = std::abs(wirtinger_jacobian(f, z, 1e-2).d_z(0, 0) - exact);
  const double e2 = std::abs(wirtinger_jacobian(f, z, 5e-3).d_z(0, 0) - exact);
  EXPECT_NEAR(e1 / e2, 4.0, 0.3);
}

TEST(FiniteDifference, DefaultStepScalesWithPoint) {
  CVector small = CVector::Zero(2), large = CVector::Constant(2, 100.0);
  EXPECT_GT(default_fd_step(small), 0.0);
  EXPECT_GT(default_fd_step(large), default_fd_step(small));
}

TEST(FiniteDifference, NonFiniteEvaluationThrows) {
  const ComplexMap f([](const CVector& v) {
    CVector out(1);
    out(0) = std::numeric_limits<double>::quiet_NaN() * v(0);
    return out;
  });
  try {
    wirtinger_jacobian(f, CVector::Ones(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteEvaluation);
  }
}
