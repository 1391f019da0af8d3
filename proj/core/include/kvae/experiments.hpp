#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvae/config.hpp"
#include "kvae/cvae.hpp"
#include "kvae/ingest.hpp"
#include "kvae/kahler.hpp"
#include "kvae/sampler.hpp"

namespace kvae {

inline const std::vector<std::string> kExperimentIds = {"train",   "cdf-equivalence", "runtime",
                                                        "outliers", "eigenmaps",      "diagnostics"};

struct ExperimentSpec {
  std::string id;
  Config config;
  std::string output_dir;
  std::uint64_t seed = 0;
};

// Desk-scale defaults are built in; this preset shrinks everything so a full
// experiment finishes in seconds.
Config smoke_config();

struct ExperimentData {
  Dataset train;
  Dataset eval;
};
ExperimentData load_experiment_data(const Config& c, std::uint64_t seed);

// Gradient check of the configured architecture on a toy-sized copy, with
// every loss term active. Throws GradientCheckFailed above the tolerance.
GradientCheckReport gradient_gate(const Config& c, std::uint64_t seed);

struct TrainedArm {
  CVaeModel model;
  LatentAtlas atlas;
  std::vector<EpochMetrics> log;
};
TrainedArm train_arm(const Config& c, const RMatrix& train, double gamma, std::uint64_t seed);

struct TrainOutcome {
  GradientCheckReport gate;
  std::vector<EpochMetrics> log;
  std::size_t refreshes = 0;
};
TrainOutcome run_train(const ExperimentSpec& spec);

// --- metric CDF equivalence ---
struct CdfResult {
  std::vector<double> nn_values;           // Re (J^H Sigma_nn^-1 J + Jt^H Sigma_nn^-1 Jt)_11
  std::vector<double> expectation_values;  // Re E_w[ddbar Psi]_11
  double ks = 0.0;
};
CdfResult cdf_equivalence(const LatentAtlas& atlas, const std::vector<CVector>& points,
                          std::optional<double> fd_step = std::nullopt);
CdfResult run_cdf_equivalence(const ExperimentSpec& spec);

// --- runtime ---
struct RuntimeRow {
  std::size_t atlas_size = 0;
  double expectation_seconds = 0.0;
  double nn_seconds = 0.0;
  cdouble expectation_value;
  double nn_value = 0.0;
};
struct RuntimeResult {
  std::vector<RuntimeRow> rows;
  double expectation_slope = 0.0;  // log-log least squares
  double nn_slope = 0.0;
};
RuntimeResult runtime_benchmark(const std::vector<std::size_t>& sizes, Eigen::Index data_dim,
                                Eigen::Index latent_dim, int reps, std::uint64_t seed);
LatentAtlas synthetic_atlas(std::size_t size, Eigen::Index data_dim, Eigen::Index latent_dim, std::uint64_t seed);
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);
RuntimeResult run_runtime_benchmark(const ExperimentSpec& spec);

// --- outliers ---
struct OutlierArmStats {
  std::string arm;
  double mean_nn = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
  double frac_above_95 = 0.0;  // fraction beyond the training 95th percentile
  double frac_above_99 = 0.0;
  std::size_t samples = 0;
};
struct OutlierReport {
  OutlierArmStats training;  // leave-one-out self distances
  OutlierArmStats baseline;
  OutlierArmStats kahler;
  bool feature_space = false;
};

// RMS distance from each query column to its nearest reference column. With
// leave_one_out the queries are the reference set and self matches are skipped.
RVector nn_distances(const RMatrix& queries, const RMatrix& reference, bool leave_one_out = false);
OutlierArmStats outlier_stats(const std::string& arm, const RVector& distances, double thr95, double thr99);
OutlierReport run_outlier_experiment(const ExperimentSpec& spec);

// --- Laplacian eigenmaps ---
enum class LaplacianMode { kGeneralized, kCombinatorial };
struct EigenmapResult {
  RVector eigenvalues;  // nontrivial, ascending
  RMatrix embedding;    // m x dims
  double variance_ratio = 0.0;  // minor / major principal variance of the 2-D embedding
};
// Symmetric kNN graph with Gaussian weights (median kNN distance as bandwidth),
// each edge scaled by the mean of the endpoint node scales.
RMatrix knn_graph(const RMatrix& points, int k, const RVector* node_scale, double* bandwidth = nullptr);
int connected_components(const RMatrix& weights);
EigenmapResult laplacian_eigenmaps(const RMatrix& weights, int dims, LaplacianMode mode);

struct EigenmapsOutput {
  EigenmapResult prior;
  EigenmapResult metric;
};
EigenmapsOutput run_eigenmaps(const ExperimentSpec& spec);

// --- diagnostics ---
struct DiagnosticsReport {
  AlignmentReport alignment;
  std::vector<double> pluriharmonic;  // |ddbar x_k| diagonal entries
  std::vector<double> eps_trace;
};
DiagnosticsReport run_diagnostics(const ExperimentSpec& spec);

// Dispatches on spec.id; returns a short human-readable summary.
std::string run_experiment(const ExperimentSpec& spec);

}  // namespace kvae
