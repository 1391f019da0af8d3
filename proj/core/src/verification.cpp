#include "kvae/verification.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "kvae/bytes.hpp"
#include "kvae/cgaussian.hpp"
#include "kvae/error.hpp"
#include "kvae/experiments.hpp"
#include "kvae/report.hpp"
#include "kvae/rng.hpp"

namespace kvae {

namespace {

namespace fs = std::filesystem;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CMatrix random_cmatrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale) {
  CMatrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) m.col(j) = scale * standard_complex_normal(rng, r);
  return m;
}

RVector uniform_vector(Rng& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  RVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

std::string fmt(double v) { return format_double(v); }

CriterionResult make(int id, std::string name) {
  CriterionResult r;
  r.id = id;
  r.name = std::move(name);
  return r;
}

}  // namespace

DecoderStatModel random_stat_model(Eigen::Index d, Eigen::Index n, std::uint64_t seed, bool varying) {
  Rng rng(seed);
  const CMatrix A = random_cmatrix(rng, n, d, 1.0);
  const CMatrix B = random_cmatrix(rng, n, d, 0.5);
  const CMatrix P = random_cmatrix(rng, n, d, 0.5);
  const CMatrix Q = random_cmatrix(rng, n, d, 0.5);
  const RVector base = uniform_vector(rng, n, -0.5, 0.5);
  RMatrix W = RMatrix::Zero(n, 2 * d);
  if (varying) W = 0.4 * standard_normal(rng, n * 2 * d).reshaped(n, 2 * d);

  DecoderStatModel m;
  m.latent_dim = d;
  m.data_dim = n;
  m.mean_map = ComplexMap([=](const CVector& z) -> CVector {
    return A * z + B * z.conjugate() + ((P * z).array() * (Q * z).conjugate().array()).matrix();
  });
  m.cov_map = [=](const CVector& z) -> RVector { return (base + W * to_real(z)).array().exp().matrix(); };
  return m;
}

LatentAtlas random_atlas(Eigen::Index d, Eigen::Index n, std::size_t N, std::uint64_t seed, ExponentSign sign) {
  // Pluriharmonic decoder (holomorphic plus antiholomorphic parts), the
  // regime where the mixture formula is the exact Levi form.
  Rng prng(derive_seed(seed, 1));
  const CMatrix A = random_cmatrix(prng, n, d, 1.0);
  const CMatrix B = random_cmatrix(prng, n, d, 0.5);
  const CMatrix P = random_cmatrix(prng, n, d, 0.5);
  const CMatrix Q = random_cmatrix(prng, n, d, 0.5);
  const ComplexMap decoder([=](const CVector& z) -> CVector {
    const CVector p = P * z, q = Q * z;
    return A * z + B * z.conjugate() + p.cwiseProduct(p) + q.cwiseProduct(q).conjugate();
  });
  Rng rng(derive_seed(seed, 2));
  std::vector<AtlasComponent> comps(N);
  for (auto& c : comps) {
    c.weight = uniform_vector(rng, 1, 0.5, 1.5)(0);
    c.mean = decoder(0.8 * standard_complex_normal(rng, d)) + 0.2 * standard_complex_normal(rng, n);
    c.variance = uniform_vector(rng, n, 0.5, 1.5);
  }
  double total = 0.0;
  for (const auto& c : comps) total += c.weight;
  for (auto& c : comps) c.weight /= total;
  const double rho = median_heuristic_rho(comps);
  return LatentAtlas(std::move(comps), rho, decoder, d, sign);
}

double relative_frobenius(const HermitianMatrix& a, const HermitianMatrix& reference) {
  return (a - reference).frobenius_norm() / std::max(reference.frobenius_norm(), 1e-300);
}

// 1. MC Fisher vs exact Fisher.
CriterionResult criterion_mc_fisher(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(1, "Monte Carlo Fisher matches the exact Fisher metric");
  constexpr double kTol = 0.05;
  constexpr double kBudget = 60.0;
  double worst = 0.0, worst_displayed = 0.0;
  for (std::uint64_t m = 0; m < 10; ++m) {
    const DecoderStatModel model = random_stat_model(2, 3, derive_seed(seed, 100 + m), m % 2 == 1);
    Rng rng(derive_seed(seed, 200 + m));
    const CVector z = 0.5 * standard_complex_normal(rng, 2);
    const HermitianMatrix mc = mc_fisher_estimate(model, z, 100000, derive_seed(seed, 300 + m)).matrix;
    worst = std::max(worst, relative_frobenius(mc, exact_fisher_metric(model, z).matrix));
    worst_displayed = std::max(worst_displayed, relative_frobenius(mc, displayed_fisher_metric(model, z).matrix));
  }
  r.seconds = sw.seconds();
  r.passed = worst < kTol && r.seconds < kBudget;
  r.detail = "max rel Frobenius " + fmt(worst) + " (tol " + fmt(kTol) + "), against displayed constants " +
             fmt(worst_displayed) + "; " + fmt(r.seconds) + " s (budget " + fmt(kBudget) + " s)";
  return r;
}

// 2. KL Hessian vs exact Fisher.
CriterionResult criterion_kl_hessian(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(2, "KL Hessian equals the exact Fisher metric");
  constexpr double kTol = 1e-3;
  constexpr double kBudget = 10.0;
  double worst = 0.0;
  for (std::uint64_t m = 0; m < 10; ++m) {
    const DecoderStatModel model = random_stat_model(2, 3, derive_seed(seed, 400 + m), m >= 5);
    Rng rng(derive_seed(seed, 500 + m));
    const CVector z = 0.5 * standard_complex_normal(rng, 2);
    worst = std::max(worst, relative_frobenius(kl_hessian_metric(model, z).matrix, exact_fisher_metric(model, z).matrix));
  }
  r.seconds = sw.seconds();
  r.passed = worst < kTol && r.seconds < kBudget;
  r.detail = "max rel error " + fmt(worst) + " (tol " + fmt(kTol) + ", 5 of 10 with varying covariance); " +
             fmt(r.seconds) + " s (budget " + fmt(kBudget) + " s)";
  return r;
}

// 3. Mixture metric vs FD Levi form of the potential.
CriterionResult criterion_mixture_identity(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(3, "mixture metric equals the FD mixed Hessian of the potential");
  constexpr double kTol = 1e-4;
  constexpr double kBudget = 30.0;
  double worst = 0.0, worst_levi = 0.0, worst_positive = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const LatentAtlas atlas = random_atlas(2, 3, 3 + k % 5, derive_seed(seed, 600 + k));
    Rng rng(derive_seed(seed, 700 + k));
    const CVector z = 0.8 * standard_complex_normal(rng, 2);
    auto fd_levi = [&](const LatentAtlas& a) {
      return mixed_hessian_scalar([&](const CVector& w) { return potential(a, w); }, z);
    };
    const HermitianMatrix fd = fd_levi(atlas);
    worst = std::max(worst, relative_frobenius(mixture_metric(atlas, z).metric.matrix, fd));
    worst_levi = std::max(worst_levi, relative_frobenius(potential_levi_form(atlas, z), fd));
    const LatentAtlas pos = atlas.with_sign(ExponentSign::kPositive);
    worst_positive = std::max(worst_positive, relative_frobenius(mixture_metric(pos, z).metric.matrix, fd_levi(pos)));
  }
  r.seconds = sw.seconds();
  r.passed = worst < kTol && r.seconds < kBudget;
  r.detail = "default (Gaussian-weight) sign: max rel error " + fmt(worst) + " (tol " + fmt(kTol) +
             "); closed-form Levi form of the same potential " + fmt(worst_levi) + "; positive exponent sign " +
             fmt(worst_positive) + "; " + fmt(r.seconds) + " s";
  return r;
}

// 4. PSH certificate and negative control.
CriterionResult criterion_psh(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(4, "mixture potential is certified PSH; negative control fails");
  std::size_t passed = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k < 100; ++k) {
    const LatentAtlas atlas = random_atlas(2, 3, 4, derive_seed(seed, 800 + k));
    Rng rng(derive_seed(seed, 900 + k));
    std::vector<CVector> pts(100);
    for (auto& p : pts) p = standard_complex_normal(rng, 2);
    const PshReport rep = psh_certificate(atlas, pts);
    passed += rep.passed ? 1 : 0;
    worst_margin = std::min(worst_margin, rep.min_eigenvalue + rep.threshold);
  }
  const LatentAtlas atlas = random_atlas(2, 3, 4, derive_seed(seed, 999));
  PshOptions neg;
  neg.potential_override = [](const CVector& z) { return -z.squaredNorm(); };
  Rng rng(derive_seed(seed, 998));
  std::vector<CVector> pts(100);
  for (auto& p : pts) p = standard_complex_normal(rng, 2);
  const PshReport control = psh_certificate(atlas, pts, neg);
  r.seconds = sw.seconds();
  r.passed = passed == 100 && !control.passed;
  r.detail = std::to_string(passed) + "/100 atlases certified (worst margin " + fmt(worst_margin) +
             "); negative control min eigenvalue " + fmt(control.min_eigenvalue) +
             (control.passed ? " certified (wrong)" : " rejected");
  return r;
}

// 5. Single-component regime.
CriterionResult criterion_single_component(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(5, "near one well-separated component the metric is the pulled-back precision");
  constexpr double kTol = 1e-2;
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    Rng rng(derive_seed(seed, 1100 + k));
    const Eigen::Index d = 2, n = 3;
    const double rho = 1.0;
    const CVector mu1 = standard_complex_normal(rng, n);
    const CMatrix A = random_cmatrix(rng, n, d, 1.0);
    std::vector<AtlasComponent> comps(3);
    for (std::size_t i = 0; i < comps.size(); ++i) {
      comps[i].weight = 1.0 / 3.0;
      comps[i].variance = uniform_vector(rng, n, 0.5, 1.5);
      CVector dir = standard_complex_normal(rng, n);
      dir /= dir.norm();
      comps[i].mean = i == 0 ? mu1 : CVector(mu1 + 10.0 * rho * (1.0 + static_cast<double>(i)) * dir);
    }
    const RVector inv1 = comps[0].variance.cwiseInverse();
    // Holomorphic affine decoder through mu_1.
    const ComplexMap dec([=](const CVector& z) -> CVector { return mu1 + A * z; });
    const LatentAtlas atlas(comps, rho, dec, d);
    CVector z = standard_complex_normal(rng, d);
    z *= 0.5e-3 / (A * z).norm();  // |x(z) - mu_1| = 5e-4
    const HermitianMatrix h = mixture_metric(atlas, z).metric.matrix;
    const HermitianMatrix ref(A.adjoint() * inv1.asDiagonal() * A);
    worst = std::max(worst, relative_frobenius(ref, h));
  }
  r.seconds = sw.seconds();
  r.passed = worst < kTol;
  r.detail = "max ||h - J^H S1^-1 J|| / ||h|| = " + fmt(worst) + " over 10 atlases (tol " + fmt(kTol) + ")";
  return r;
}

// 6. MC identity against the closed form with doubled constants.
CriterionResult criterion_fisher_potential(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(6, "MC Hessian-plus-covariance matches the closed-form Fisher expression");
  constexpr double kTol = 0.05;
  double worst = 0.0, worst_exact = 0.0, worst_se = 0.0;
  for (std::uint64_t m = 0; m < 5; ++m) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(m % 2);
    const DecoderStatModel model = random_stat_model(d, 3, derive_seed(seed, 1200 + m), true);
    Rng rng(derive_seed(seed, 1300 + m));
    const CVector z = 0.5 * standard_complex_normal(rng, d);
    const FisherPotentialIdentity id = fisher_potential_identity(model, z, 100000, 1.0, derive_seed(seed, 1400 + m));
    worst = std::max(worst, relative_frobenius(id.lhs, id.rhs_displayed));
    worst_exact = std::max(worst_exact, relative_frobenius(id.lhs, id.rhs));
    worst_se = std::max(worst_se, id.lhs_standard_error / id.lhs.frobenius_norm());
  }
  r.seconds = sw.seconds();
  r.passed = worst < kTol;
  r.detail = "against doubled-constant closed form: max rel error " + fmt(worst) + " (tol " + fmt(kTol) +
             "); against 2 rho^2 x exact Fisher: " + fmt(worst_exact) + " (relative MC s.e. " + fmt(worst_se) + ")";
  return r;
}

// 7. Six moment identities.
CriterionResult criterion_moments(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(7, "complex Gaussian moment identities hold within 3 standard errors");
  constexpr double kZ = 3.0;
  std::size_t failures = 0, total = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const MomentIdentity which : kAllMomentIdentities) {
    for (std::uint64_t k = 0; k < 20; ++k) {
      Rng rng(derive_seed(seed, 1500 + 100 * static_cast<std::uint64_t>(which) + k));
      const Eigen::Index n = 3;
      const ComplexGaussianParams p =
          ComplexGaussianParams::circular(standard_complex_normal(rng, n), uniform_vector(rng, n, 0.5, 2.0));
      MomentQuery q{random_cmatrix(rng, n, n, 0.7), random_cmatrix(rng, n, n, 0.7), standard_complex_normal(rng, n),
                    standard_complex_normal(rng, n)};
      const MomentCheck c = moment_oracle(p, q, which, 1000000, rng);
      const double z = c.z_score();
      ++total;
      if (!(z <= kZ)) ++failures;
      if (z > worst) {
        worst = z;
        worst_name = std::string(moment_identity_name(which));
      }
    }
  }
  r.seconds = sw.seconds();
  r.passed = failures == 0;
  r.detail = std::to_string(total - failures) + "/" + std::to_string(total) + " within " + fmt(kZ) +
             " s.e.; worst z = " + fmt(worst) + " (" + worst_name + ")";
  return r;
}

// 8. Outlier direction at desk scale.
CriterionResult criterion_outlier_direction(const AcceptanceOptions& opt) {
  Stopwatch sw;
  CriterionResult r = make(8, "metric-guided sampling lowers NN-distance tails and outlier rates");
  constexpr double kBudget = 3600.0;
  ExperimentSpec spec;
  spec.id = "outliers";
  if (opt.quick_outliers) spec.config = smoke_config();
  spec.output_dir = (fs::path(opt.work_dir) / "outliers").string();
  spec.seed = opt.seed;
  const OutlierReport rep = run_outlier_experiment(spec);
  const auto& b = rep.baseline;
  const auto& k = rep.kahler;
  r.seconds = sw.seconds();
  r.passed = k.p95 < b.p95 && k.p99 < b.p99 && k.frac_above_95 < b.frac_above_95 &&
             k.frac_above_99 < b.frac_above_99 && r.seconds <= kBudget;
  r.detail = std::string(opt.quick_outliers ? "[smoke scale] " : "") + "p95 " + fmt(k.p95) + " vs " + fmt(b.p95) +
             ", p99 " + fmt(k.p99) + " vs " + fmt(b.p99) + ", >train95 " + fmt(k.frac_above_95) + " vs " +
             fmt(b.frac_above_95) + ", >train99 " + fmt(k.frac_above_99) + " vs " + fmt(b.frac_above_99) +
             " (kahler vs baseline); " + fmt(r.seconds) + " s";
  return r;
}

// 9. Runtime direction and linear scaling.
CriterionResult criterion_runtime(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(9, "expectation metric is faster than NN search at N=1e4 and linear in N");
  constexpr double kSlopeLo = 0.8, kSlopeHi = 1.2;
  const RuntimeResult res = runtime_benchmark({1000, 3000, 10000, 30000, 100000}, 64, 2, 5, seed);
  const RuntimeRow* at = nullptr;
  for (const auto& row : res.rows)
    if (row.atlas_size == 10000) at = &row;
  r.seconds = sw.seconds();
  const bool faster = at && at->expectation_seconds < at->nn_seconds;
  const bool linear = res.expectation_slope >= kSlopeLo && res.expectation_slope <= kSlopeHi;
  r.passed = faster && linear;
  r.detail = "at N=1e4 expectation " + fmt(at ? at->expectation_seconds : 0.0) + " s vs NN " +
             fmt(at ? at->nn_seconds : 0.0) + " s; expectation slope " + fmt(res.expectation_slope) + " (range [" +
             fmt(kSlopeLo) + ", " + fmt(kSlopeHi) + "]), NN slope " + fmt(res.nn_slope);
  return r;
}

// 10. Gradient check gate.
CriterionResult criterion_gradient_gate(std::uint64_t seed) {
  Stopwatch sw;
  CriterionResult r = make(10, "backprop matches central differences on the toy model");
  try {
    const GradientCheckReport rep = gradient_gate(Config{}, seed);
    r.passed = true;
    r.detail = std::to_string(rep.checked) + " parameters, max rel error " + fmt(rep.max_relative_error) +
               " (tol 1e-4)";
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kGradientCheckFailed) throw;
    r.passed = false;
    r.detail = e.what();
  }
  r.seconds = sw.seconds();
  return r;
}

// 11. Byte-identical CSVs across reruns.
CriterionResult criterion_determinism(const AcceptanceOptions& opt) {
  Stopwatch sw;
  CriterionResult r = make(11, "every experiment rerun with the same seed writes identical CSVs");
  std::size_t files = 0;
  std::vector<std::string> mismatches;
  for (const std::string& id : kExperimentIds) {
    std::string dirs[2];
    for (int run = 0; run < 2; ++run) {
      ExperimentSpec spec;
      spec.id = id;
      spec.config = smoke_config();
      spec.seed = opt.seed;
      spec.output_dir = dirs[run] = (fs::path(opt.work_dir) / ("determinism_" + std::to_string(run)) / id).string();
      fs::remove_all(spec.output_dir);
      run_experiment(spec);
    }
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dirs[0]))
      if (e.path().extension() == ".csv") names.push_back(e.path().filename().string());
    std::size_t other = 0;
    for (const auto& e : fs::directory_iterator(dirs[1])) other += e.path().extension() == ".csv" ? 1 : 0;
    if (other != names.size()) mismatches.push_back(id + ": file sets differ");
    for (const auto& name : names) {
      ++files;
      const fs::path b = fs::path(dirs[1]) / name;
      if (!fs::exists(b) || read_file_bytes((fs::path(dirs[0]) / name).string()) != read_file_bytes(b.string())) {
        mismatches.push_back(id + "/" + name);
      }
    }
  }
  r.seconds = sw.seconds();
  r.passed = mismatches.empty() && files > 0;
  r.detail = std::to_string(files) + " CSV files compared across " + std::to_string(kExperimentIds.size()) +
             " experiments";
  for (const auto& m : mismatches) r.detail += "; differs: " + m;
  return r;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& opt, const std::vector<int>& only) {
  std::vector<CriterionResult> out;
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  for (int id = 1; id <= 11; ++id) {
    if (!wanted(id)) continue;
    Stopwatch sw;
    try {
      switch (id) {
        case 1: out.push_back(criterion_mc_fisher(opt.seed)); break;
        case 2: out.push_back(criterion_kl_hessian(opt.seed)); break;
        case 3: out.push_back(criterion_mixture_identity(opt.seed)); break;
        case 4: out.push_back(criterion_psh(opt.seed)); break;
        case 5: out.push_back(criterion_single_component(opt.seed)); break;
        case 6: out.push_back(criterion_fisher_potential(opt.seed)); break;
        case 7: out.push_back(criterion_moments(opt.seed)); break;
        case 8: out.push_back(criterion_outlier_direction(opt)); break;
        case 9: out.push_back(criterion_runtime(opt.seed)); break;
        case 10: out.push_back(criterion_gradient_gate(opt.seed)); break;
        case 11: out.push_back(criterion_determinism(opt)); break;
      }
    } catch (const std::exception& e) {
      CriterionResult r = make(id, "criterion " + std::to_string(id));
      r.detail = std::string("exception: ") + e.what();
      r.seconds = sw.seconds();
      out.push_back(r);
    }
  }
  return out;
}

std::string format_result(const CriterionResult& r) {
  char head[64];
  std::snprintf(head, sizeof head, "%s [%2d] ", r.passed ? "PASS" : "FAIL", r.id);
  char secs[32];
  std::snprintf(secs, sizeof secs, " (%.1f s)", r.seconds);
  return head + r.name + secs + ": " + r.detail;
}

}  // namespace kvae
