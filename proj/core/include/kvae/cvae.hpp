#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "kvae/cgaussian.hpp"
#include "kvae/fisher.hpp"
#include "kvae/kahler.hpp"
#include "kvae/wirtinger.hpp"

namespace kvae {

enum class Activation { kSplitTanh, kIdentity };

struct CVaeDims {
  Eigen::Index data_dim = 0;    // n
  Eigen::Index latent_dim = 0;  // d
  Eigen::Index hidden = 0;      // H
};

// Complex affine layers on real pairs: y = W x + b with W = Wr + i Wi.
// Parameters live in one flat vector, per layer [Wr | Wi | br | bi], Wr and
// Wi column-major.
//   encoder  x --enc1--> act --mu-->  mu
//                            --u-->   u,  log variance = Re u, relation from Im u
//   decoder  z --dec1--> act --dec2--> x_hat
class CVaeModel {
 public:
  enum Layer { kEnc1 = 0, kEncMu, kEncU, kDec1, kDec2, kLayerCount };

  struct LayerShape {
    Eigen::Index out = 0;
    Eigen::Index in = 0;
    Eigen::Index offset = 0;
    Eigen::Index size() const { return 2 * out * in + 2 * out; }
  };

  CVaeModel() = default;
  // All parameters zero.
  CVaeModel(CVaeDims dims, Activation activation = Activation::kSplitTanh);
  // Weights ~ N(0, scale^2 / fan_in) per real component, biases zero.
  static CVaeModel random(CVaeDims dims, Activation activation, std::uint64_t seed, double scale = 1.0);

  const CVaeDims& dims() const { return dims_; }
  Activation activation() const { return activation_; }
  Eigen::Index parameter_count() const { return params_.size(); }
  LayerShape layer(Layer l) const { return layers_[l]; }

  const RVector& params() const { return params_; }
  RVector& params() { return params_; }

 private:
  CVaeDims dims_;
  Activation activation_ = Activation::kSplitTanh;
  LayerShape layers_[kLayerCount];
  RVector params_;
};

// Encoder head for a batch (columns). log_var = Re u, rel = Im u.
struct EncoderBatch {
  CMatrix mu;      // d x B
  RMatrix log_var; // d x B
  RMatrix rel;     // d x B
};

EncoderBatch encode_batch(const CVaeModel& model, const CMatrix& x);
// sigma = exp(log_var / 2), delta = sigma * tanh(rel), so |delta| < sigma.
ComplexGaussianParams encode(const CVaeModel& model, const CVector& x);
CVector decode(const CVaeModel& model, const CVector& z);
CMatrix decode_batch(const CVaeModel& model, const CMatrix& z);

// Decoder snapshot usable as a ComplexMap (single and batched forms).
ComplexMap decoder_map(const CVaeModel& model);
// Decoder mean with a fixed diagonal likelihood variance.
DecoderStatModel decoder_stat_model(const CVaeModel& model, const RVector& variance);

enum class GeometryMode { kStored, kPerIteration };
enum class AtlasVarianceMode { kLocal, kGlobal };

struct TrainConfig {
  double beta = 1.0;
  double gamma = 0.0;
  int metric_refresh_every = 50;  // K
  double rho = 0.0;               // <= 0 selects the median heuristic
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  // Weight on |Im x_hat|^2 in the reconstruction term.
  double imag_penalty = 1.0;

  GeometryMode geometry_mode = GeometryMode::kStored;
  LogDetMode logdet_mode = LogDetMode::kFull;
  int geometry_anchors = 32;
  double fd_step = 1e-4;  // decoder Jacobian step inside log det h
  double geometry_step = 1e-4;  // step of the log det h gradient in z

  int atlas_size = 128;
  int atlas_knn = 16;
  AtlasVarianceMode atlas_variance = AtlasVarianceMode::kLocal;
  double variance_floor = 1e-2;

  void validate() const;
};

struct LossBreakdown {
  double reconstruction = 0.0;
  double kl = 0.0;
  double geometric = 0.0;
  double total = 0.0;
};

// Standard normal draws for the real and imaginary noise channels, d x B.
struct Noise {
  RMatrix re;
  RMatrix im;
  static Noise draw(Eigen::Index d, Eigen::Index batch, std::uint64_t seed);
};

// Frozen log det h used by the geometric term. kExact evaluates the atlas at
// every query; kStored linearizes around anchor points computed at refresh.
class GeometrySnapshot {
 public:
  static GeometrySnapshot exact(std::shared_ptr<const LatentAtlas> atlas, LogDetMode mode,
                                double fd_step, double gradient_step);
  static GeometrySnapshot stored(std::shared_ptr<const LatentAtlas> atlas, LogDetMode mode,
                                 double fd_step, double gradient_step,
                                 const std::vector<CVector>& anchors);
  // Flat metric: log det h = 0 everywhere.
  static GeometrySnapshot flat();

  // Returns log det h at z (clamped); writes d/d(x, y) in surrogate layout if grad != nullptr.
  double log_det(const CVector& z, RVector* grad) const;

  const LatentAtlas* atlas() const { return atlas_.get(); }
  std::size_t anchor_count() const { return anchors_.size(); }
  std::size_t clamped_anchors() const { return clamped_; }

 private:
  double evaluate(const CVector& z) const;

  std::shared_ptr<const LatentAtlas> atlas_;
  LogDetMode mode_ = LogDetMode::kFull;
  double fd_step_ = 1e-4;
  double gradient_step_ = 1e-4;
  bool stored_ = false;
  std::vector<CVector> anchors_;
  std::vector<double> anchor_values_;
  std::vector<RVector> anchor_grads_;
  std::size_t clamped_ = 0;
};

struct LossAndGradient {
  LossBreakdown loss;
  RVector gradient;
  double eps_diag = 0.0;  // mean RMS of Im x_hat over the batch
};

// batch: n x B real data. geometry may be null when cfg.gamma == 0.
LossAndGradient loss_and_gradient(const CVaeModel& model, const RMatrix& batch,
                                  const GeometrySnapshot* geometry, const TrainConfig& cfg,
                                  const Noise& noise, bool want_gradient = true);

// Throws MissingAtlas if gamma > 0 and atlas is null.
LossBreakdown loss(const CVaeModel& model, const RMatrix& batch, const LatentAtlas* atlas,
                   const TrainConfig& cfg, const Noise& noise);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  Eigen::Index worst_parameter = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central FD on `count` seeded random parameters. Relative error is
// |a - f| / max(|a|, |f|, abs_floor).
GradientCheckReport gradient_check(const CVaeModel& model, const RMatrix& batch,
                                   const GeometrySnapshot* geometry, const TrainConfig& cfg,
                                   std::uint64_t seed, std::size_t count = 50,
                                   double step = 1e-5, double abs_floor = 1e-6);

struct EpochMetrics {
  int epoch = 0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double geometric = 0.0;
  double total = 0.0;
  double eps_diag = 0.0;
};

struct TrainResult {
  CVaeModel model;
  std::vector<EpochMetrics> log;
  std::optional<LatentAtlas> atlas;
  std::size_t refreshes = 0;
  std::size_t clamped_anchors = 0;
  std::size_t total_anchors = 0;
};

// Atlas from a seeded reservoir of training items: a_i = 1/N, mu_i the
// decoded encoder mean, Sigma_i the reconstruction residual variance
// (pooled over the k nearest reservoir items, or globally) plus a floor.
LatentAtlas build_atlas(const CVaeModel& model, const RMatrix& data, const TrainConfig& cfg,
                        std::uint64_t seed);

// Throws NonFiniteLoss with the offending batch index.
TrainResult train(const CVaeModel& model, const RMatrix& data, const TrainConfig& cfg);

// ||(i/2) I + Ric / 2||_F, directly and through the trace expansion.
double ricci_penalty(const CMatrix& ric);
double ricci_penalty_trace(const CMatrix& ric);
double ricci_regularizer(const std::vector<CVector>& z_batch, const LatentAtlas& atlas,
                         std::optional<double> fd_step = std::nullopt);

void save_checkpoint(const CVaeModel& model, const std::string& path, const std::string& sidecar = {});
CVaeModel load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_model(const CVaeModel& model);
CVaeModel deserialize_model(const std::vector<std::uint8_t>& bytes);

std::string metrics_csv_rows(const std::vector<EpochMetrics>& log);

}  // namespace kvae
