#include "kvae/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <queue>

#include "kvae/bytes.hpp"
#include "kvae/error.hpp"
#include "kvae/report.hpp"
#include "kvae/rng.hpp"
#include "kvae/wirtinger.hpp"
#include "parallel.hpp"

namespace kvae {

namespace {

namespace fs = std::filesystem;

// Desk scale: MNIST 8000 / 2000 at 14x14, d = 8.
const std::map<std::string, std::string>& desk_defaults() {
  static const std::map<std::string, std::string> d = {
      {"dataset", "mnist"},        {"train_count", "8000"},   {"eval_count", "2000"},
      {"height", "14"},            {"width", "14"},           {"subset_seed", "1"},
      {"latent_dim", "8"},         {"hidden", "64"},          {"activation", "split_tanh"},
      {"init_scale", "1"},         {"beta", "1"},             {"gamma", "0.1"},
      {"refresh_every", "50"},     {"epochs", "20"},          {"batch_size", "64"},
      {"learning_rate", "0.002"},  {"momentum", "0.9"},       {"atlas_size", "128"},
      {"atlas_knn", "16"},         {"variance_floor", "0.01"}, {"alpha", "0.05"},
      {"lambda", "0.05"},          {"temperature", "1"},      {"jitter", "3"},
      {"overdraw", "4"},           {"normalize", "none"},     {"samples", "1000"},
      {"cdf_points", "200"},       {"cdf_components", "300"}, {"ks_threshold", "0.2"},
      {"runtime_sizes", "100,1000,10000,100000"},             {"runtime_reps", "5"},
      {"runtime_data_dim", "64"},  {"runtime_latent_dim", "2"}, {"eigen_k", "10"},
      {"eigen_points", "300"},     {"diag_points", "500"},    {"hist_bins", "20"},
      {"feature_space", "false"},  {"gate_tolerance", "1e-4"}};
  return d;
}

Config effective_config(const ExperimentSpec& spec) {
  Config c;
  for (const auto& [k, v] : desk_defaults()) c.set(k, v);
  for (const auto& [k, v] : spec.config.entries()) c.set(k, v);
  c.set("seed", std::to_string(spec.seed));
  return c;
}

std::string out_path(const ExperimentSpec& spec, const std::string& name) {
  fs::create_directories(spec.output_dir);
  return (fs::path(spec.output_dir) / name).string();
}

std::string metrics_body(const std::vector<EpochMetrics>& log) { return metrics_csv_rows(log); }

std::vector<CVector> encoder_means(const CVaeModel& model, const RMatrix& data, const std::vector<std::size_t>& idx) {
  CMatrix xs(data.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) xs.col(static_cast<Eigen::Index>(j)) = data.col(static_cast<Eigen::Index>(idx[j])).cast<cdouble>();
  const CMatrix mu = encode_batch(model, xs).mu;
  std::vector<CVector> out;
  for (Eigen::Index j = 0; j < mu.cols(); ++j) out.push_back(mu.col(j));
  return out;
}

// Emitted images: real part of the decoder output, clipped to pixel range.
RMatrix emit_images(const CVaeModel& model, const std::vector<CVector>& z) {
  CMatrix zs(model.dims().latent_dim, static_cast<Eigen::Index>(z.size()));
  for (std::size_t j = 0; j < z.size(); ++j) zs.col(static_cast<Eigen::Index>(j)) = z[j];
  return decode_batch(model, zs).real().cwiseMax(0.0).cwiseMin(1.0);
}

RMatrix encoder_features(const CVaeModel& model, const RMatrix& images) {
  const CMatrix mu = encode_batch(model, images.cast<cdouble>()).mu;
  RMatrix f(2 * mu.rows(), mu.cols());
  f.topRows(mu.rows()) = mu.real();
  f.bottomRows(mu.rows()) = mu.imag();
  return f;
}

std::vector<double> to_std(const RVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

Config smoke_config() {
  Config c;
  const std::map<std::string, std::string> s = {
      {"train_count", "600"},   {"eval_count", "200"},     {"height", "7"},           {"width", "7"},
      {"latent_dim", "2"},      {"hidden", "16"},          {"epochs", "3"},           {"batch_size", "50"},
      {"refresh_every", "10"},  {"atlas_size", "32"},      {"atlas_knn", "8"},        {"geometry_anchors", "8"},
      {"samples", "60"},        {"cdf_points", "40"},      {"cdf_components", "60"},  {"runtime_sizes", "100,1000"},
      {"runtime_data_dim", "16"}, {"eigen_points", "60"},  {"diag_points", "120"}};
  for (const auto& [k, v] : s) c.set(k, v);
  return c;
}

ExperimentData load_experiment_data(const Config& c, std::uint64_t seed) {
  const std::string kind = c.get("dataset", "mnist");
  const auto train = static_cast<std::size_t>(c.get_int("train_count", 8000));
  const auto eval = static_cast<std::size_t>(c.get_int("eval_count", 2000));
  Dataset full;
  if (kind == "mnist") {
    full = load_mnist(c.get("data_dir", (fs::path(data_root()) / "mnist").string()));
  } else if (kind == "cifar10") {
    full = load_cifar10(c.get("data_dir", (fs::path(data_root()) / "cifar-10-batches-bin").string()));
  } else if (kind == "synthetic") {
    ClusterSpec cs;
    cs.clusters = static_cast<int>(c.get_int("clusters", 2));
    cs.dim = static_cast<int>(c.get_int("cluster_dim", 16));
    cs.separation = c.get_double("separation", 0.3);
    cs.noise = c.get_double("noise", 0.03);
    cs.per_cluster = static_cast<int>((train + eval + static_cast<std::size_t>(cs.clusters) - 1) / static_cast<std::size_t>(cs.clusters));
    cs.seed = seed;
    full = synthetic_clusters(cs);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown dataset '" + kind + "'");
  }
  auto [tr, ev] = split_train_eval(full, train, eval, c.get_u64("subset_seed", 1));
  if (kind != "synthetic") {
    const int h = static_cast<int>(c.get_int("height", full.height));
    const int w = static_cast<int>(c.get_int("width", full.width));
    if (h != full.height || w != full.width) {
      tr = subset_and_downsample(tr, tr.size(), h, w, 0);
      ev = subset_and_downsample(ev, ev.size(), h, w, 0);
    }
  }
  return {std::move(tr), std::move(ev)};
}

GradientCheckReport gradient_gate(const Config& c, std::uint64_t seed) {
  const CVaeDims dims{6, 2, 5};
  const CVaeModel model = CVaeModel::random(dims, activation_from(c), derive_seed(seed, 5), 1.0);
  ClusterSpec cs;
  cs.clusters = 2;
  cs.dim = 6;
  cs.separation = 0.3;
  cs.noise = 0.05;
  cs.per_cluster = 4;
  cs.seed = derive_seed(seed, 4);
  const RMatrix data = synthetic_clusters(cs).items;

  TrainConfig tc = train_config_from(c);
  if (tc.gamma <= 0) tc.gamma = 0.5;
  if (tc.beta <= 0) tc.beta = 1.0;
  tc.atlas_size = 8;
  tc.atlas_knn = 3;
  auto atlas = std::make_shared<const LatentAtlas>(build_atlas(model, data, tc, derive_seed(seed, 6)));
  const GeometrySnapshot geo = GeometrySnapshot::exact(atlas, tc.logdet_mode, tc.fd_step, tc.geometry_step);
  const GradientCheckReport rep = gradient_check(model, data, &geo, tc, derive_seed(seed, 8), 50);
  const double tol = c.get_double("gate_tolerance", 1e-4);
  if (!(rep.max_relative_error < tol)) {
    throw Error(ErrorCode::kGradientCheckFailed,
                "max relative error " + format_double(rep.max_relative_error) + " at parameter " +
                    std::to_string(rep.worst_parameter) + " (analytic " + format_double(rep.analytic_at_worst) +
                    ", numeric " + format_double(rep.numeric_at_worst) + ")");
  }
  return rep;
}

TrainedArm train_arm(const Config& c, const RMatrix& train, double gamma, std::uint64_t seed) {
  const CVaeDims dims = model_dims_from(c, train.rows());
  const CVaeModel init =
      CVaeModel::random(dims, activation_from(c), derive_seed(seed, 11), c.get_double("init_scale", 1.0));
  TrainConfig tc = train_config_from(c);
  tc.gamma = gamma;
  tc.seed = seed;
  TrainResult r = kvae::train(init, train, tc);
  return {std::move(r.model), std::move(*r.atlas), std::move(r.log)};
}

TrainOutcome run_train(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  const ExperimentData data = load_experiment_data(c, spec.seed);
  TrainOutcome out;
  out.gate = gradient_gate(c, spec.seed);

  const CVaeDims dims = model_dims_from(c, data.train.dim());
  const CVaeModel init =
      CVaeModel::random(dims, activation_from(c), derive_seed(spec.seed, 11), c.get_double("init_scale", 1.0));
  TrainConfig tc = train_config_from(c);
  tc.seed = spec.seed;
  const TrainResult r = train(init, data.train.items, tc);
  out.log = r.log;
  out.refreshes = r.refreshes;

  const std::string hash = c.hash();
  write_csv(out_path(spec, "metrics.csv"), spec.seed, hash, metrics_body(r.log));
  write_csv(out_path(spec, "gate.csv"), spec.seed, hash,
            "checked,max_relative_error,worst_parameter\n" + std::to_string(out.gate.checked) + "," +
                format_double(out.gate.max_relative_error) + "," + std::to_string(out.gate.worst_parameter) + "\n");
  save_checkpoint(r.model, out_path(spec, "model.cvae"),
                  "# seed=" + std::to_string(spec.seed) + ", config_hash=" + hash + "\n" + c.canonical());
  save_atlas(*r.atlas, out_path(spec, "atlas.katl"));

  std::vector<double> ep, rec, eps;
  for (const auto& e : r.log) {
    ep.push_back(e.epoch);
    rec.push_back(e.reconstruction);
    eps.push_back(e.eps_diag);
  }
  SvgPlot plot("training", "epoch", "value");
  plot.add_line(ep, rec, "reconstruction");
  plot.add_line(ep, eps, "eps_diag");
  plot.save(out_path(spec, "metrics.svg"));
  return out;
}

// --- CDF equivalence -------------------------------------------------------

CdfResult cdf_equivalence(const LatentAtlas& atlas, const std::vector<CVector>& points,
                          std::optional<double> fd_step) {
  CdfResult r;
  r.nn_values.resize(points.size());
  r.expectation_values.resize(points.size());
  detail::for_each_shard(points.size(), [&](std::size_t j) {
    const JacobianWithValue jv = wirtinger_jacobian_at(atlas.decoder(), points[j], fd_step);
    const RVector col = jv.jacobian.d_z.col(0).cwiseAbs2() + jv.jacobian.d_zbar.col(0).cwiseAbs2();
    const Eigen::Index nn = nearest_component(atlas, jv.value);
    r.nn_values[j] = atlas.inv_variances().col(nn).dot(col);
    const RVector dw = atlas.inv_variances() * weights_at(atlas, jv.value);
    r.expectation_values[j] = dw.dot(col);
  });
  r.ks = ks_statistic(r.nn_values, r.expectation_values);
  return r;
}

CdfResult run_cdf_equivalence(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  const ExperimentData data = load_experiment_data(c, spec.seed);
  gradient_gate(c, spec.seed);
  const TrainedArm arm = train_arm(c, data.train.items, c.get_double("gamma", 0.1), spec.seed);

  TrainConfig tc = train_config_from(c);
  tc.atlas_size = static_cast<int>(c.get_int("cdf_components", 300));
  const LatentAtlas atlas = build_atlas(arm.model, data.train.items, tc, derive_seed(spec.seed, 21));
  const auto P = std::min<std::size_t>(static_cast<std::size_t>(c.get_int("cdf_points", 200)), data.eval.size());
  const auto idx = subset_indices(data.eval.size(), P, derive_seed(spec.seed, 22));
  const CdfResult r = cdf_equivalence(atlas, encoder_means(arm.model, data.eval.items, idx), tc.fd_step);

  const double thr = c.get_double("ks_threshold", 0.2);
  std::string body = "index,nn_fisher_11,expectation_11\n";
  for (std::size_t j = 0; j < P; ++j) {
    body += std::to_string(j) + "," + format_double(r.nn_values[j]) + "," + format_double(r.expectation_values[j]) + "\n";
  }
  const std::string hash = c.hash();
  write_csv(out_path(spec, "cdf.csv"), spec.seed, hash, body);
  write_csv(out_path(spec, "cdf_summary.csv"), spec.seed, hash,
            "points,components,ks,threshold,within_threshold\n" + std::to_string(P) + "," +
                std::to_string(atlas.size()) + "," + format_double(r.ks) + "," + format_double(thr) + "," +
                (r.ks <= thr ? "true" : "false") + "\n");
  std::vector<double> xa, pa, xb, pb;
  empirical_cdf(r.nn_values, xa, pa);
  empirical_cdf(r.expectation_values, xb, pb);
  SvgPlot plot("(1,1) metric entry CDF, KS = " + format_double(r.ks), "value", "cumulative fraction");
  plot.set_log_x(true);
  plot.add_line(xa, pa, "nearest neighbour");
  plot.add_line(xb, pb, "expectation");
  plot.save(out_path(spec, "cdf.svg"));
  return r;
}

// --- runtime ---------------------------------------------------------------

LatentAtlas synthetic_atlas(std::size_t size, Eigen::Index data_dim, Eigen::Index latent_dim, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> ud(0.5, 1.5);
  std::vector<AtlasComponent> comps(size);
  const double w = 1.0 / static_cast<double>(size);
  for (auto& comp : comps) {
    comp.weight = w;
    comp.mean = standard_complex_normal(rng, data_dim);
    comp.variance.resize(data_dim);
    for (Eigen::Index k = 0; k < data_dim; ++k) comp.variance(k) = ud(rng);
  }
  return LatentAtlas(std::move(comps), std::sqrt(static_cast<double>(data_dim)), ComplexMap(), latent_dim);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = std::min(x.size(), y.size());
  if (m < 2) return 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double a = std::log10(x[i]), b = std::log10(y[i]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
  }
  const double md = static_cast<double>(m);
  return (md * sxy - sx * sy) / (md * sxx - sx * sx);
}

RuntimeResult runtime_benchmark(const std::vector<std::size_t>& sizes, Eigen::Index data_dim,
                                Eigen::Index latent_dim, int reps, std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  RuntimeResult res;
  volatile double sink = 0.0;
  for (std::size_t N : sizes) {
    const LatentAtlas atlas = synthetic_atlas(N, data_dim, latent_dim, derive_seed(seed, N));
    Rng rng(derive_seed(seed, N + 1));
    const CVector x = standard_complex_normal(rng, data_dim);
    CMatrix J(data_dim, latent_dim), Jt(data_dim, latent_dim);
    for (Eigen::Index a = 0; a < latent_dim; ++a) {
      J.col(a) = standard_complex_normal(rng, data_dim);
      Jt.col(a) = 0.1 * standard_complex_normal(rng, data_dim);
    }
    RuntimeRow row;
    row.atlas_size = N;
    row.expectation_value = mixture_metric_entry(atlas, x, J, Jt, 0, 0);
    row.nn_value = nn_fisher_entry(atlas, x, J, Jt, 0, 1e-2);

    const std::size_t inner = std::max<std::size_t>(1, 200000 / N);
    std::vector<double> te, tn;
    for (int r = 0; r < reps; ++r) {
      auto t0 = clock::now();
      for (std::size_t k = 0; k < inner; ++k) sink = sink + mixture_metric_entry(atlas, x, J, Jt, 0, 0).real();
      auto t1 = clock::now();
      for (std::size_t k = 0; k < inner; ++k) sink = sink + nn_fisher_entry(atlas, x, J, Jt, 0, 1e-2);
      auto t2 = clock::now();
      te.push_back(std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(inner));
      tn.push_back(std::chrono::duration<double>(t2 - t1).count() / static_cast<double>(inner));
    }
    row.expectation_seconds = percentile(te, 0.5);
    row.nn_seconds = percentile(tn, 0.5);
    res.rows.push_back(row);
  }
  std::vector<double> ns, te, tn;
  for (const auto& r : res.rows) {
    ns.push_back(static_cast<double>(r.atlas_size));
    te.push_back(r.expectation_seconds);
    tn.push_back(r.nn_seconds);
  }
  res.expectation_slope = loglog_slope(ns, te);
  res.nn_slope = loglog_slope(ns, tn);
  return res;
}

RuntimeResult run_runtime_benchmark(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  std::vector<std::size_t> sizes;
  for (double v : c.get_list("runtime_sizes", {100, 1000, 10000, 100000})) {
    if (!(v >= 1)) throw Error(ErrorCode::kInvalidArgument, "runtime sizes must be >= 1");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  const int reps = static_cast<int>(c.get_int("runtime_reps", 5));
  if (reps < 1) throw Error(ErrorCode::kInvalidArgument, "runtime_reps must be >= 1");
  const RuntimeResult r = runtime_benchmark(sizes, c.get_int("runtime_data_dim", 64),
                                            c.get_int("runtime_latent_dim", 2), reps, spec.seed);
  // Values are deterministic; wall-clock timings go to a separate file.
  std::string body = "atlas_size,expectation_re,expectation_im,nn_value\n";
  std::string timing = "atlas_size,expectation_seconds,nn_seconds\n";
  std::vector<double> ns, te, tn;
  for (const auto& row : r.rows) {
    body += std::to_string(row.atlas_size) + "," + format_double(row.expectation_value.real()) + "," +
            format_double(row.expectation_value.imag()) + "," + format_double(row.nn_value) + "\n";
    timing += std::to_string(row.atlas_size) + "," + format_double(row.expectation_seconds) + "," +
              format_double(row.nn_seconds) + "\n";
    ns.push_back(static_cast<double>(row.atlas_size));
    te.push_back(row.expectation_seconds);
    tn.push_back(row.nn_seconds);
  }
  timing += "# expectation_slope=" + format_double(r.expectation_slope) + ", nn_slope=" + format_double(r.nn_slope) + "\n";
  const std::string hash = c.hash();
  write_csv(out_path(spec, "runtime.csv"), spec.seed, hash, body);
  write_text_file(out_path(spec, "runtime_timings.txt"), timing);
  SvgPlot plot("metric entry construction time", "atlas size N", "seconds");
  plot.set_log_x(true);
  plot.set_log_y(true);
  plot.add_line(ns, te, "expectation");
  plot.add_line(ns, tn, "nearest neighbour");
  plot.save(out_path(spec, "runtime.svg"));
  return r;
}

// --- outliers --------------------------------------------------------------

RVector nn_distances(const RMatrix& queries, const RMatrix& reference, bool leave_one_out) {
  if (queries.rows() != reference.rows()) throw Error(ErrorCode::kDimensionMismatch, "query and reference dims");
  if (reference.cols() == 0 || (leave_one_out && reference.cols() < 2)) {
    throw Error(ErrorCode::kInvalidArgument, "not enough reference points");
  }
  const RVector rn = reference.colwise().squaredNorm().transpose();
  RVector out(queries.cols());
  constexpr Eigen::Index kBlock = 256;
  const double inv_n = 1.0 / static_cast<double>(queries.rows());
  for (Eigen::Index s = 0; s < queries.cols(); s += kBlock) {
    const Eigen::Index b = std::min(kBlock, queries.cols() - s);
    const RMatrix G = queries.middleCols(s, b).transpose() * reference;
    for (Eigen::Index i = 0; i < b; ++i) {
      const double qn = queries.col(s + i).squaredNorm();
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < reference.cols(); ++j) {
        if (leave_one_out && j == s + i) continue;
        best = std::min(best, qn + rn(j) - 2.0 * G(i, j));
      }
      out(s + i) = std::sqrt(std::max(best, 0.0) * inv_n);
    }
  }
  return out;
}

OutlierArmStats outlier_stats(const std::string& arm, const RVector& distances, double thr95, double thr99) {
  OutlierArmStats s;
  s.arm = arm;
  s.samples = static_cast<std::size_t>(distances.size());
  const auto v = to_std(distances);
  s.mean_nn = distances.mean();
  s.p95 = percentile(v, 0.95);
  s.p99 = percentile(v, 0.99);
  s.frac_above_95 = static_cast<double>((distances.array() > thr95).count()) / static_cast<double>(distances.size());
  s.frac_above_99 = static_cast<double>((distances.array() > thr99).count()) / static_cast<double>(distances.size());
  return s;
}

OutlierReport run_outlier_experiment(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  const ExperimentData data = load_experiment_data(c, spec.seed);
  gradient_gate(c, spec.seed);
  const TrainedArm base = train_arm(c, data.train.items, 0.0, spec.seed);
  const TrainedArm kahler = train_arm(c, data.train.items, c.get_double("gamma", 0.1), spec.seed);

  const SamplerConfig ks = sampler_config_from(c);
  SamplerConfig bs = ks;
  bs.alpha = 0.0;
  bs.lambda = 0.0;
  const auto S = static_cast<std::size_t>(c.get_int("samples", 1000));
  SamplerState sb_state, sk_state;
  const SampleBatch sb = metric_sample(base.model, base.atlas, data.eval.items, bs, S, derive_seed(spec.seed, 31), &sb_state);
  const SampleBatch sk = metric_sample(kahler.model, kahler.atlas, data.eval.items, ks, S, derive_seed(spec.seed, 31), &sk_state);
  RMatrix gen_b = emit_images(base.model, sb.selected_points());
  RMatrix gen_k = emit_images(kahler.model, sk.selected_points());

  OutlierReport rep;
  rep.feature_space = c.get_bool("feature_space", false);
  RMatrix reference = data.train.items;
  if (rep.feature_space) {
    // One shared feature extractor keeps the two arms comparable.
    reference = encoder_features(base.model, reference);
    gen_b = encoder_features(base.model, gen_b);
    gen_k = encoder_features(base.model, gen_k);
  }
  const RVector self = nn_distances(reference, reference, true);
  const auto self_v = to_std(self);
  const double thr95 = percentile(self_v, 0.95), thr99 = percentile(self_v, 0.99);
  rep.training = outlier_stats("training", self, thr95, thr99);
  rep.baseline = outlier_stats("baseline", nn_distances(gen_b, reference), thr95, thr99);
  rep.kahler = outlier_stats("kahler", nn_distances(gen_k, reference), thr95, thr99);

  std::string body = "arm,mean_nn,p95,p99,frac_above_train95,frac_above_train99,samples,clamped\n";
  auto row = [&](const OutlierArmStats& s, std::size_t clamped) {
    body += s.arm + "," + format_double(s.mean_nn) + "," + format_double(s.p95) + "," + format_double(s.p99) + "," +
            format_double(s.frac_above_95) + "," + format_double(s.frac_above_99) + "," + std::to_string(s.samples) +
            "," + std::to_string(clamped) + "\n";
  };
  row(rep.training, 0);
  row(rep.baseline, sb.clamped);
  row(rep.kahler, sk.clamped);
  const std::string hash = c.hash();
  write_csv(out_path(spec, "outliers.csv"), spec.seed, hash, body);
  write_csv(out_path(spec, "metrics_baseline.csv"), spec.seed, hash, metrics_body(base.log));
  write_csv(out_path(spec, "metrics_kahler.csv"), spec.seed, hash, metrics_body(kahler.log));

  std::vector<double> xa, pa, xb, pb, xc, pc;
  empirical_cdf(self_v, xa, pa);
  empirical_cdf(to_std(nn_distances(gen_b, reference)), xb, pb);
  empirical_cdf(to_std(nn_distances(gen_k, reference)), xc, pc);
  SvgPlot plot("nearest-neighbour distance to training data", "RMS distance", "cumulative fraction");
  plot.add_line(xa, pa, "training (LOO)");
  plot.add_line(xb, pb, "baseline");
  plot.add_line(xc, pc, "kahler");
  plot.save(out_path(spec, "outliers.svg"));
  return rep;
}

// --- eigenmaps ---------------------------------------------------------------

RMatrix knn_graph(const RMatrix& points, int k, const RVector* node_scale, double* bandwidth) {
  const Eigen::Index m = points.cols();
  if (k < 1 || k >= m) throw Error(ErrorCode::kInvalidArgument, "k must be in [1, points - 1]");
  const RVector sq = points.colwise().squaredNorm().transpose();
  RMatrix d2 = (sq.replicate(1, m) + sq.transpose().replicate(m, 1) - 2.0 * points.transpose() * points).cwiseMax(0.0);
  std::vector<std::vector<Eigen::Index>> nbrs(static_cast<std::size_t>(m));
  std::vector<double> dists;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) {
    std::iota(order.begin(), order.end(), 0);
    order.erase(order.begin() + i);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return d2(i, a) < d2(i, b) || (d2(i, a) == d2(i, b) && a < b);
    });
    order.resize(static_cast<std::size_t>(m));
    for (int t = 0; t < k; ++t) {
      nbrs[static_cast<std::size_t>(i)].push_back(order[static_cast<std::size_t>(t)]);
      dists.push_back(std::sqrt(d2(i, order[static_cast<std::size_t>(t)])));
    }
  }
  double bw = percentile(dists, 0.5);
  if (!(bw > 0)) bw = 1.0;
  if (bandwidth) *bandwidth = bw;
  RMatrix W = RMatrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j : nbrs[static_cast<std::size_t>(i)]) {
      double w = std::exp(-d2(i, j) / (bw * bw));
      if (node_scale) w *= 0.5 * ((*node_scale)(i) + (*node_scale)(j));
      W(i, j) = W(j, i) = w;
    }
  }
  return W;
}

int connected_components(const RMatrix& weights) {
  const Eigen::Index m = weights.rows();
  std::vector<char> seen(static_cast<std::size_t>(m), 0);
  int count = 0;
  for (Eigen::Index s = 0; s < m; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    ++count;
    std::queue<Eigen::Index> q;
    q.push(s);
    seen[static_cast<std::size_t>(s)] = 1;
    while (!q.empty()) {
      const Eigen::Index u = q.front();
      q.pop();
      for (Eigen::Index v = 0; v < m; ++v) {
        if (weights(u, v) > 0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          q.push(v);
        }
      }
    }
  }
  return count;
}

EigenmapResult laplacian_eigenmaps(const RMatrix& weights, int dims, LaplacianMode mode) {
  const Eigen::Index m = weights.rows();
  if (weights.cols() != m || dims < 1 || dims >= m) {
    throw Error(ErrorCode::kInvalidArgument, "need a square weight matrix and 1 <= dims < size");
  }
  const int comps = connected_components(weights);
  if (comps > 1) {
    throw Error(ErrorCode::kDisconnectedGraph, "graph has " + std::to_string(comps) + " connected components");
  }
  const RVector deg = weights.rowwise().sum();
  RMatrix L = -weights;
  L.diagonal() += deg;
  RMatrix V;
  RVector lam;
  if (mode == LaplacianMode::kGeneralized) {
    // L v = lambda D v  <=>  (D^-1/2 L D^-1/2) u = lambda u,  v = D^-1/2 u
    const RVector dm = deg.cwiseSqrt().cwiseInverse();
    Eigen::SelfAdjointEigenSolver<RMatrix> es(dm.asDiagonal() * L * dm.asDiagonal());
    lam = es.eigenvalues();
    V = dm.asDiagonal() * es.eigenvectors();
  } else {
    Eigen::SelfAdjointEigenSolver<RMatrix> es(L);
    lam = es.eigenvalues();
    V = es.eigenvectors();
  }
  EigenmapResult r;
  r.eigenvalues = lam.segment(1, dims);
  r.embedding = V.middleCols(1, dims);
  for (int c = 0; c < dims; ++c) {
    Eigen::Index at = 0;
    r.embedding.col(c).cwiseAbs().maxCoeff(&at);
    if (r.embedding(at, c) < 0) r.embedding.col(c) *= -1.0;
  }
  if (dims >= 2) {
    const RMatrix E = r.embedding.leftCols(2).rowwise() - r.embedding.leftCols(2).colwise().mean();
    const RMatrix cov = E.transpose() * E / static_cast<double>(m);
    Eigen::SelfAdjointEigenSolver<RMatrix> es(cov);
    r.variance_ratio = es.eigenvalues()(1) > 0 ? es.eigenvalues()(0) / es.eigenvalues()(1) : 0.0;
  }
  return r;
}

EigenmapsOutput run_eigenmaps(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  const ExperimentData data = load_experiment_data(c, spec.seed);
  gradient_gate(c, spec.seed);
  const TrainedArm arm = train_arm(c, data.train.items, c.get_double("gamma", 0.1), spec.seed);
  const auto m = static_cast<std::size_t>(c.get_int("eigen_points", 300));
  const int k = static_cast<int>(c.get_int("eigen_k", 10));
  const Eigen::Index d = arm.model.dims().latent_dim;

  std::vector<CVector> prior(m);
  Rng rng(derive_seed(spec.seed, 41));
  for (auto& z : prior) z = standard_complex_normal(rng, d);
  const SamplerConfig sc = sampler_config_from(c);
  const std::vector<CVector> metric =
      metric_sample(arm.model, arm.atlas, data.eval.items, sc, m, derive_seed(spec.seed, 42)).selected_points();

  const std::string hash = c.hash();
  std::string body = "arm,index,v1,v2\n";
  std::string summary = "arm,lambda1,lambda2,variance_ratio,bandwidth\n";
  SvgPlot plot("Laplacian eigenmaps, curvature-weighted kNN graph", "v1", "v2");
  EigenmapsOutput out;
  for (int a = 0; a < 2; ++a) {
    const std::vector<CVector>& pts = a == 0 ? prior : metric;
    const std::string name = a == 0 ? "prior" : "metric";
    RMatrix coords(2 * d, static_cast<Eigen::Index>(pts.size()));
    RVector ell(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t j = 0; j < pts.size(); ++j) coords.col(static_cast<Eigen::Index>(j)) = to_real(pts[j]);
    detail::for_each_shard(pts.size(), [&](std::size_t j) {
      ell(static_cast<Eigen::Index>(j)) = log_det_metric(arm.atlas, pts[j], LogDetMode::kFull, train_config_from(c).fd_step).value;
    });
    const double med = percentile(to_std(ell), 0.5);
    const RVector scale = (ell.array() - med).exp();
    double bw = 0.0;
    const RMatrix W = knn_graph(coords, k, &scale, &bw);
    EigenmapResult r = laplacian_eigenmaps(W, 2, LaplacianMode::kGeneralized);
    for (Eigen::Index j = 0; j < r.embedding.rows(); ++j) {
      body += name + "," + std::to_string(j) + "," + format_double(r.embedding(j, 0)) + "," +
              format_double(r.embedding(j, 1)) + "\n";
    }
    summary += name + "," + format_double(r.eigenvalues(0)) + "," + format_double(r.eigenvalues(1)) + "," +
               format_double(r.variance_ratio) + "," + format_double(bw) + "\n";
    plot.add_scatter(to_std(r.embedding.col(0)), to_std(r.embedding.col(1)), name);
    (a == 0 ? out.prior : out.metric) = std::move(r);
  }
  write_csv(out_path(spec, "eigenmaps.csv"), spec.seed, hash, body);
  write_csv(out_path(spec, "eigenmaps_summary.csv"), spec.seed, hash, summary);
  plot.save(out_path(spec, "eigenmaps.svg"));
  return out;
}

// --- diagnostics -------------------------------------------------------------

DiagnosticsReport run_diagnostics(const ExperimentSpec& spec) {
  const Config c = effective_config(spec);
  const ExperimentData data = load_experiment_data(c, spec.seed);
  gradient_gate(c, spec.seed);
  const TrainedArm arm = train_arm(c, data.train.items, c.get_double("gamma", 0.1), spec.seed);
  const double fd = train_config_from(c).fd_step;

  const auto P = std::min<std::size_t>(static_cast<std::size_t>(c.get_int("diag_points", 500)), data.eval.size());
  const auto idx = subset_indices(data.eval.size(), P, derive_seed(spec.seed, 51));
  const std::vector<CVector> pts = encoder_means(arm.model, data.eval.items, idx);

  DiagnosticsReport rep;
  rep.alignment = jacobian_alignment(arm.atlas, pts, fd, true);
  const std::size_t hp = std::min<std::size_t>(pts.size(), 50);
  std::vector<std::vector<double>> parts(hp);
  detail::for_each_shard(hp, [&](std::size_t j) {
    for (const cdouble v : pluriharmonic_entries(arm.atlas.decoder(), pts[j], 1e-3, true)) parts[j].push_back(std::abs(v));
  });
  for (const auto& p : parts) rep.pluriharmonic.insert(rep.pluriharmonic.end(), p.begin(), p.end());
  for (const auto& e : arm.log) rep.eps_trace.push_back(e.eps_diag);

  // Histogram of log10 |ddbar x_k|.
  const int bins = static_cast<int>(c.get_int("hist_bins", 20));
  std::vector<double> logs;
  for (double v : rep.pluriharmonic) logs.push_back(std::log10(std::max(v, 1e-300)));
  const double lo = *std::min_element(logs.begin(), logs.end());
  const double hi = *std::max_element(logs.begin(), logs.end());
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  std::vector<double> centers(static_cast<std::size_t>(bins)), counts(static_cast<std::size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) centers[static_cast<std::size_t>(b)] = lo + (b + 0.5) * width;
  for (double v : logs) counts[static_cast<std::size_t>(std::min(bins - 1, static_cast<int>((v - lo) / width)))] += 1;

  const std::string hash = c.hash();
  write_csv(out_path(spec, "diagnostics.csv"), spec.seed, hash,
            "quantity,value\nalignment_cosine," + format_double(rep.alignment.mean_cosine) + "\nalignment_rank," +
                std::to_string(rep.alignment.rank) + "\nalignment_fit_points," + std::to_string(rep.alignment.fit_points) +
                "\npluriharmonic_median," + format_double(percentile(rep.pluriharmonic, 0.5)) + "\neps_final," +
                format_double(rep.eps_trace.empty() ? 0.0 : rep.eps_trace.back()) + "\n");
  std::string hist = "log10_center,count\n";
  for (int b = 0; b < bins; ++b)
    hist += format_double(centers[static_cast<std::size_t>(b)]) + "," + format_double(counts[static_cast<std::size_t>(b)]) + "\n";
  write_csv(out_path(spec, "pluriharmonic_hist.csv"), spec.seed, hash, hist);
  std::string eps = "epoch,eps_diag\n";
  std::vector<double> ep;
  for (std::size_t e = 0; e < rep.eps_trace.size(); ++e) {
    eps += std::to_string(e) + "," + format_double(rep.eps_trace[e]) + "\n";
    ep.push_back(static_cast<double>(e));
  }
  write_csv(out_path(spec, "eps_trace.csv"), spec.seed, hash, eps);

  SvgPlot hp_plot("diagonal mixed derivatives of the decoder", "log10 |d dbar x_k|", "count");
  hp_plot.add_bars(centers, counts, "entries");
  hp_plot.save(out_path(spec, "pluriharmonic_hist.svg"));
  SvgPlot eps_plot("imaginary output magnitude", "epoch", "eps");
  eps_plot.add_line(ep, rep.eps_trace, "eps_diag");
  eps_plot.save(out_path(spec, "eps_trace.svg"));
  return rep;
}

std::string run_experiment(const ExperimentSpec& spec) {
  if (spec.id == "train") {
    const TrainOutcome o = run_train(spec);
    return "gate max rel err " + format_double(o.gate.max_relative_error) + "; final reconstruction " +
           format_double(o.log.empty() ? 0.0 : o.log.back().reconstruction);
  }
  if (spec.id == "cdf-equivalence") {
    const CdfResult r = run_cdf_equivalence(spec);
    return "KS statistic " + format_double(r.ks);
  }
  if (spec.id == "runtime") {
    const RuntimeResult r = run_runtime_benchmark(spec);
    return "expectation slope " + format_double(r.expectation_slope) + ", nn slope " + format_double(r.nn_slope);
  }
  if (spec.id == "outliers") {
    const OutlierReport r = run_outlier_experiment(spec);
    return "p95 baseline " + format_double(r.baseline.p95) + " kahler " + format_double(r.kahler.p95) +
           "; p99 baseline " + format_double(r.baseline.p99) + " kahler " + format_double(r.kahler.p99);
  }
  if (spec.id == "eigenmaps") {
    const EigenmapsOutput r = run_eigenmaps(spec);
    return "variance ratio prior " + format_double(r.prior.variance_ratio) + ", metric " +
           format_double(r.metric.variance_ratio);
  }
  if (spec.id == "diagnostics") {
    const DiagnosticsReport r = run_diagnostics(spec);
    return "alignment cosine " + format_double(r.alignment.mean_cosine) + " (rank " + std::to_string(r.alignment.rank) + ")";
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown experiment '" + spec.id + "'");
}

}  // namespace kvae
