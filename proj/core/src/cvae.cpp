#include "kvae/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "kvae/bytes.hpp"
#include "kvae/error.hpp"
#include "kvae/ingest.hpp"
#include "kvae/rng.hpp"
#include "parallel.hpp"

namespace kvae {

namespace {

using ConstMap = Eigen::Map<const RMatrix>;
using ConstVecMap = Eigen::Map<const RVector>;

struct Pair {
  RMatrix re;
  RMatrix im;  // empty means identically zero
};

struct LayerView {
  ConstMap wr;
  ConstMap wi;
  ConstVecMap br;
  ConstVecMap bi;
};

LayerView view(const CVaeModel& m, CVaeModel::Layer l) {
  const auto s = m.layer(l);
  const double* p = m.params().data() + s.offset;
  const Eigen::Index w = s.out * s.in;
  return {ConstMap(p, s.out, s.in), ConstMap(p + w, s.out, s.in), ConstVecMap(p + 2 * w, s.out),
          ConstVecMap(p + 2 * w + s.out, s.out)};
}

Pair affine(const LayerView& v, const Pair& x) {
  Pair y;
  y.re = v.wr * x.re;
  y.im = v.wi * x.re;
  if (x.im.size() != 0) {
    y.re.noalias() -= v.wi * x.im;
    y.im.noalias() += v.wr * x.im;
  }
  y.re.colwise() += v.br;
  y.im.colwise() += v.bi;
  return y;
}

// Accumulates the parameter gradient; returns dL/dx when wanted.
void affine_backward(const CVaeModel& m, CVaeModel::Layer l, const Pair& x, const Pair& g, RVector& grad,
                     Pair* dx) {
  const auto s = m.layer(l);
  const Eigen::Index w = s.out * s.in;
  double* p = grad.data() + s.offset;
  Eigen::Map<RMatrix> dwr(p, s.out, s.in);
  Eigen::Map<RMatrix> dwi(p + w, s.out, s.in);
  dwr.noalias() += g.re * x.re.transpose();
  dwi.noalias() += g.im * x.re.transpose();
  if (x.im.size() != 0) {
    dwr.noalias() += g.im * x.im.transpose();
    dwi.noalias() -= g.re * x.im.transpose();
  }
  Eigen::Map<RVector>(p + 2 * w, s.out) += g.re.rowwise().sum();
  Eigen::Map<RVector>(p + 2 * w + s.out, s.out) += g.im.rowwise().sum();
  if (dx) {
    const LayerView v = view(m, l);
    dx->re = v.wr.transpose() * g.re + v.wi.transpose() * g.im;
    dx->im = v.wr.transpose() * g.im - v.wi.transpose() * g.re;
  }
}

Pair activate(const CVaeModel& m, Pair h) {
  if (m.activation() == Activation::kSplitTanh) {
    h.re = h.re.array().tanh();
    h.im = h.im.array().tanh();
  }
  return h;
}

// g is dL/d(activated); a is the activated value.
void activate_backward(const CVaeModel& m, const Pair& a, Pair& g) {
  if (m.activation() == Activation::kSplitTanh) {
    g.re.array() *= 1.0 - a.re.array().square();
    g.im.array() *= 1.0 - a.im.array().square();
  }
}

double log_cosh(double v) {
  const double a = std::abs(v);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

struct Forward {
  Pair x;
  Pair e1;
  Pair mu;
  Pair u;
  Pair z;
  Pair d1;
  Pair out;
};

Pair encode_pair(const CVaeModel& m, const Pair& x, Pair* e1_out, Pair* u_out) {
  Pair e1 = activate(m, affine(view(m, CVaeModel::kEnc1), x));
  Pair mu = affine(view(m, CVaeModel::kEncMu), e1);
  if (u_out) *u_out = affine(view(m, CVaeModel::kEncU), e1);
  if (e1_out) *e1_out = std::move(e1);
  return mu;
}

Pair decode_pair(const CVaeModel& m, const Pair& z, Pair* d1_out) {
  Pair d1 = activate(m, affine(view(m, CVaeModel::kDec1), z));
  Pair out = affine(view(m, CVaeModel::kDec2), d1);
  if (d1_out) *d1_out = std::move(d1);
  return out;
}

Pair split(const CMatrix& x) { return {x.real(), x.imag()}; }
CMatrix join(const Pair& p) {
  CMatrix c(p.re.rows(), p.re.cols());
  c.real() = p.re;
  c.imag() = p.im.size() ? p.im : RMatrix::Zero(p.re.rows(), p.re.cols());
  return c;
}

void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": got " + std::to_string(got) + ", expected " + std::to_string(want));
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

constexpr char kCheckpointMagic[4] = {'C', 'V', 'A', 'E'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

CVaeModel::CVaeModel(CVaeDims dims, Activation activation) : dims_(dims), activation_(activation) {
  if (dims.data_dim < 1 || dims.latent_dim < 1 || dims.hidden < 1) {
    throw Error(ErrorCode::kInvalidArgument, "model dimensions must be positive");
  }
  const Eigen::Index n = dims.data_dim, d = dims.latent_dim, h = dims.hidden;
  const Eigen::Index shapes[kLayerCount][2] = {{h, n}, {d, h}, {d, h}, {h, d}, {n, h}};
  Eigen::Index off = 0;
  for (int l = 0; l < kLayerCount; ++l) {
    layers_[l] = {shapes[l][0], shapes[l][1], off};
    off += layers_[l].size();
  }
  params_ = RVector::Zero(off);
}

CVaeModel CVaeModel::random(CVaeDims dims, Activation activation, std::uint64_t seed, double scale) {
  CVaeModel m(dims, activation);
  Rng rng(seed);
  for (int l = 0; l < kLayerCount; ++l) {
    const auto s = m.layers_[l];
    std::normal_distribution<double> nd(0.0, scale / std::sqrt(2.0 * static_cast<double>(s.in)));
    for (Eigen::Index k = 0; k < 2 * s.out * s.in; ++k) m.params_(s.offset + k) = nd(rng);
  }
  return m;
}

EncoderBatch encode_batch(const CVaeModel& model, const CMatrix& x) {
  require_dim(x.rows(), model.dims().data_dim, "encoder input");
  Pair u;
  const Pair mu = encode_pair(model, split(x), nullptr, &u);
  return {join(mu), u.re, u.im};
}

ComplexGaussianParams encode(const CVaeModel& model, const CVector& x) {
  const EncoderBatch e = encode_batch(model, x);
  ComplexGaussianParams p;
  p.mu = e.mu.col(0);
  p.sigma = (0.5 * e.log_var.col(0)).array().exp();
  p.delta.resize(p.mu.size());
  const double tmax = std::nextafter(1.0, 0.0);
  for (Eigen::Index k = 0; k < p.mu.size(); ++k) {
    const double t = std::clamp(std::tanh(e.rel(k, 0)), -tmax, tmax);
    p.delta(k) = cdouble(p.sigma(k) * t, 0.0);
  }
  return p;
}

CMatrix decode_batch(const CVaeModel& model, const CMatrix& z) {
  require_dim(z.rows(), model.dims().latent_dim, "decoder input");
  return join(decode_pair(model, split(z), nullptr));
}

CVector decode(const CVaeModel& model, const CVector& z) { return decode_batch(model, z).col(0); }

ComplexMap decoder_map(const CVaeModel& model) {
  auto snap = std::make_shared<const CVaeModel>(model);
  return ComplexMap([snap](const CVector& z) { return decode(*snap, z); },
                    [snap](const CMatrix& z) { return decode_batch(*snap, z); });
}

DecoderStatModel decoder_stat_model(const CVaeModel& model, const RVector& variance) {
  require_dim(variance.size(), model.dims().data_dim, "likelihood variance");
  DecoderStatModel s;
  s.mean_map = decoder_map(model);
  s.cov_map = [variance](const CVector&) { return variance; };
  s.latent_dim = model.dims().latent_dim;
  s.data_dim = model.dims().data_dim;
  return s;
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidArgument, what); };
  if (!(std::isfinite(beta) && beta >= 0)) bad("beta must be finite and >= 0");
  if (!(std::isfinite(gamma) && gamma >= 0)) bad("gamma must be finite and >= 0");
  if (metric_refresh_every < 1) bad("metric_refresh_every must be >= 1");
  if (!std::isfinite(rho)) bad("rho must be finite");
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(std::isfinite(learning_rate) && learning_rate > 0)) bad("learning_rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) bad("momentum must be in [0, 1)");
  if (!(std::isfinite(imag_penalty) && imag_penalty >= 0)) bad("imag_penalty must be >= 0");
  if (geometry_anchors < 1) bad("geometry_anchors must be >= 1");
  if (!(fd_step > 0) || !(geometry_step > 0)) bad("finite-difference steps must be > 0");
  if (atlas_size < 1 || atlas_knn < 1) bad("atlas_size and atlas_knn must be >= 1");
  if (!(variance_floor > 0)) bad("variance_floor must be > 0");
}

Noise Noise::draw(Eigen::Index d, Eigen::Index batch, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd;
  Noise n{RMatrix(d, batch), RMatrix(d, batch)};
  for (Eigen::Index j = 0; j < batch; ++j)
    for (Eigen::Index k = 0; k < d; ++k) {
      n.re(k, j) = nd(rng);
      n.im(k, j) = nd(rng);
    }
  return n;
}

// --- geometry snapshot ---------------------------------------------------

GeometrySnapshot GeometrySnapshot::exact(std::shared_ptr<const LatentAtlas> atlas, LogDetMode mode,
                                         double fd_step, double gradient_step) {
  GeometrySnapshot g;
  g.atlas_ = std::move(atlas);
  g.mode_ = mode;
  g.fd_step_ = fd_step;
  g.gradient_step_ = gradient_step;
  return g;
}

GeometrySnapshot GeometrySnapshot::stored(std::shared_ptr<const LatentAtlas> atlas, LogDetMode mode,
                                          double fd_step, double gradient_step,
                                          const std::vector<CVector>& anchors) {
  GeometrySnapshot g = exact(std::move(atlas), mode, fd_step, gradient_step);
  g.stored_ = true;
  g.anchors_ = anchors;
  g.anchor_values_.assign(anchors.size(), 0.0);
  g.anchor_grads_.assign(anchors.size(), RVector());
  std::vector<char> clamped(anchors.size(), 0);
  detail::for_each_shard(anchors.size(), [&](std::size_t a) {
    const LogDetResult r = log_det_metric(*g.atlas_, anchors[a], g.mode_, g.fd_step_);
    clamped[a] = r.clamped;
    g.anchor_values_[a] = r.value;
    RVector grad = RVector::Zero(2 * anchors[a].size());
    if (!r.clamped) {
      for (Eigen::Index p = 0; p < grad.size(); ++p) {
        CVector zp = anchors[a], zm = anchors[a];
        const cdouble h = p < anchors[a].size() ? cdouble(gradient_step, 0) : cdouble(0, gradient_step);
        const Eigen::Index k = p % anchors[a].size();
        zp(k) += h;
        zm(k) -= h;
        grad(p) = (g.evaluate(zp) - g.evaluate(zm)) / (2.0 * gradient_step);
      }
    }
    g.anchor_grads_[a] = grad;
  });
  g.clamped_ = static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), 1));
  return g;
}

GeometrySnapshot GeometrySnapshot::flat() { return GeometrySnapshot(); }

double GeometrySnapshot::evaluate(const CVector& z) const {
  return log_det_metric(*atlas_, z, mode_, fd_step_).value;
}

double GeometrySnapshot::log_det(const CVector& z, RVector* grad) const {
  const Eigen::Index d = z.size();
  if (!atlas_) {
    if (grad) *grad = RVector::Zero(2 * d);
    return 0.0;
  }
  if (stored_) {
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < anchors_.size(); ++a) {
      const double dist = (z - anchors_[a]).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = a;
      }
    }
    if (grad) *grad = anchor_grads_[best];
    return anchor_values_[best] + anchor_grads_[best].dot(to_real(z - anchors_[best]));
  }
  const LogDetResult r = log_det_metric(*atlas_, z, mode_, fd_step_);
  if (grad) {
    *grad = RVector::Zero(2 * d);
    if (!r.clamped) {
      for (Eigen::Index p = 0; p < 2 * d; ++p) {
        CVector zp = z, zm = z;
        const cdouble h = p < d ? cdouble(gradient_step_, 0) : cdouble(0, gradient_step_);
        zp(p % d) += h;
        zm(p % d) -= h;
        (*grad)(p) = (evaluate(zp) - evaluate(zm)) / (2.0 * gradient_step_);
      }
    }
  }
  return r.value;
}

// --- loss ------------------------------------------------------------------

LossAndGradient loss_and_gradient(const CVaeModel& model, const RMatrix& batch,
                                  const GeometrySnapshot* geometry, const TrainConfig& cfg,
                                  const Noise& noise, bool want_gradient) {
  const Eigen::Index n = model.dims().data_dim, d = model.dims().latent_dim, B = batch.cols();
  require_dim(batch.rows(), n, "batch rows");
  if (B == 0) throw Error(ErrorCode::kInvalidArgument, "empty batch");
  require_dim(noise.re.rows(), d, "noise rows");
  require_dim(noise.re.cols(), B, "noise columns");
  require_dim(noise.im.rows(), d, "noise rows");
  require_dim(noise.im.cols(), B, "noise columns");
  if (cfg.gamma > 0 && !geometry) {
    throw Error(ErrorCode::kMissingAtlas, "gamma > 0 requires a metric snapshot");
  }

  Forward f;
  f.x.re = batch;
  f.mu = encode_pair(model, f.x, &f.e1, &f.u);
  const RMatrix& lv = f.u.re;
  const RMatrix& rel = f.u.im;
  const RMatrix q = 0.5 * (-rel.array()).exp();
  f.z.re = f.mu.re + 0.5 * noise.im;
  f.z.im = f.mu.im.array() + q.array() * noise.re.array();
  f.out = decode_pair(model, f.z, &f.d1);

  const double invB = 1.0 / static_cast<double>(B);
  LossAndGradient r;
  const RMatrix resid = f.out.re - batch;
  r.loss.reconstruction =
      (resid.squaredNorm() + cfg.imag_penalty * f.out.im.squaredNorm()) * invB;

  double kl = f.mu.re.squaredNorm() + f.mu.im.squaredNorm();
  for (Eigen::Index j = 0; j < B; ++j)
    for (Eigen::Index k = 0; k < d; ++k) {
      const double l = lv(k, j);
      kl += std::exp(0.5 * l) - 1.0 - 0.5 * l + log_cosh(rel(k, j));
    }
  r.loss.kl = kl * invB;

  std::vector<double> ell(static_cast<std::size_t>(B), 0.0);
  std::vector<RVector> ell_grad(static_cast<std::size_t>(B));
  if (geometry) {
    const CMatrix zc = join(f.z);
    const bool grads = want_gradient && cfg.gamma > 0;
    detail::for_each_shard(static_cast<std::size_t>(B), [&](std::size_t j) {
      const CVector zj = zc.col(static_cast<Eigen::Index>(j));
      ell[j] = geometry->log_det(zj, grads ? &ell_grad[j] : nullptr);
    });
    double geo = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) {
      geo += 0.5 * (f.z.re.col(j).squaredNorm() + f.z.im.col(j).squaredNorm()) - 0.5 * ell[j];
    }
    r.loss.geometric = geo * invB;
  }
  r.loss.total = r.loss.reconstruction + cfg.beta * r.loss.kl + cfg.gamma * r.loss.geometric;

  double eps = 0.0;
  for (Eigen::Index j = 0; j < B; ++j) eps += std::sqrt(f.out.im.col(j).squaredNorm() / static_cast<double>(n));
  r.eps_diag = eps * invB;

  if (!want_gradient) return r;

  RVector grad = RVector::Zero(model.parameter_count());
  Pair g_out{2.0 * invB * resid, 2.0 * invB * cfg.imag_penalty * f.out.im};
  Pair g_d1;
  affine_backward(model, CVaeModel::kDec2, f.d1, g_out, grad, &g_d1);
  activate_backward(model, f.d1, g_d1);
  Pair g_z;
  affine_backward(model, CVaeModel::kDec1, f.z, g_d1, grad, &g_z);

  if (geometry && cfg.gamma > 0) {
    const double c = cfg.gamma * invB;
    for (Eigen::Index j = 0; j < B; ++j) {
      const RVector& gl = ell_grad[static_cast<std::size_t>(j)];
      g_z.re.col(j) += c * (f.z.re.col(j) - 0.5 * gl.head(d));
      g_z.im.col(j) += c * (f.z.im.col(j) - 0.5 * gl.tail(d));
    }
  }

  const double kb = cfg.beta * invB;
  Pair g_mu{g_z.re + 2.0 * kb * f.mu.re, g_z.im + 2.0 * kb * f.mu.im};
  Pair g_u;
  g_u.re = kb * (0.5 * (0.5 * lv.array()).exp() - 0.5);
  g_u.im = -(g_z.im.array() * noise.re.array() * q.array()) + kb * rel.array().tanh();

  Pair g_e1, g_e1u;
  affine_backward(model, CVaeModel::kEncMu, f.e1, g_mu, grad, &g_e1);
  affine_backward(model, CVaeModel::kEncU, f.e1, g_u, grad, &g_e1u);
  g_e1.re += g_e1u.re;
  g_e1.im += g_e1u.im;
  activate_backward(model, f.e1, g_e1);
  affine_backward(model, CVaeModel::kEnc1, f.x, g_e1, grad, nullptr);
  r.gradient = std::move(grad);
  return r;
}

LossBreakdown loss(const CVaeModel& model, const RMatrix& batch, const LatentAtlas* atlas,
                   const TrainConfig& cfg, const Noise& noise) {
  if (cfg.gamma > 0 && !atlas) throw Error(ErrorCode::kMissingAtlas, "gamma > 0 requires an atlas snapshot");
  if (!atlas) return loss_and_gradient(model, batch, nullptr, cfg, noise, false).loss;
  // Non-owning view; the snapshot does not outlive this call.
  const auto view_ptr = std::shared_ptr<const LatentAtlas>(std::shared_ptr<const LatentAtlas>(), atlas);
  const GeometrySnapshot geo =
      GeometrySnapshot::exact(view_ptr, cfg.logdet_mode, cfg.fd_step, cfg.geometry_step);
  return loss_and_gradient(model, batch, &geo, cfg, noise, false).loss;
}

GradientCheckReport gradient_check(const CVaeModel& model, const RMatrix& batch,
                                   const GeometrySnapshot* geometry, const TrainConfig& cfg,
                                   std::uint64_t seed, std::size_t count, double step, double abs_floor) {
  const Noise noise = Noise::draw(model.dims().latent_dim, batch.cols(), derive_seed(seed, 7));
  const RVector analytic = loss_and_gradient(model, batch, geometry, cfg, noise, true).gradient;
  const auto P = static_cast<std::size_t>(model.parameter_count());
  const auto idx = subset_indices(P, std::min(count, P), seed);

  GradientCheckReport rep;
  CVaeModel probe = model;
  for (std::size_t k : idx) {
    const auto i = static_cast<Eigen::Index>(k);
    const double orig = probe.params()(i);
    probe.params()(i) = orig + step;
    const double lp = loss_and_gradient(probe, batch, geometry, cfg, noise, false).loss.total;
    probe.params()(i) = orig - step;
    const double lm = loss_and_gradient(probe, batch, geometry, cfg, noise, false).loss.total;
    probe.params()(i) = orig;
    const double num = (lp - lm) / (2.0 * step);
    const double a = analytic(i);
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), abs_floor});
    ++rep.checked;
    if (rel > rep.max_relative_error || rep.worst_parameter < 0) {
      rep.max_relative_error = std::max(rel, rep.max_relative_error);
      rep.worst_parameter = i;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = num;
    }
  }
  return rep;
}

// --- atlas and training ----------------------------------------------------

LatentAtlas build_atlas(const CVaeModel& model, const RMatrix& data, const TrainConfig& cfg,
                        std::uint64_t seed) {
  require_dim(data.rows(), model.dims().data_dim, "data rows");
  if (data.cols() == 0) throw Error(ErrorCode::kEmptyAtlas, "no data to build an atlas from");
  const auto N = std::min<std::size_t>(static_cast<std::size_t>(cfg.atlas_size), static_cast<std::size_t>(data.cols()));
  const auto idx = subset_indices(static_cast<std::size_t>(data.cols()), N, seed);
  RMatrix xs(data.rows(), static_cast<Eigen::Index>(N));
  for (std::size_t j = 0; j < N; ++j) xs.col(static_cast<Eigen::Index>(j)) = data.col(static_cast<Eigen::Index>(idx[j]));

  const EncoderBatch enc = encode_batch(model, xs.cast<cdouble>());
  const CMatrix means = decode_batch(model, enc.mu);
  const RMatrix resid = (means - xs.cast<cdouble>()).cwiseAbs2();

  RMatrix var(data.rows(), static_cast<Eigen::Index>(N));
  if (cfg.atlas_variance == AtlasVarianceMode::kGlobal) {
    const RVector g = resid.rowwise().mean();
    var = g.replicate(1, static_cast<Eigen::Index>(N));
  } else {
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.atlas_knn), N);
    const RVector sq = xs.colwise().squaredNorm().transpose();
    const RMatrix gram = xs.transpose() * xs;
    std::vector<std::size_t> order(N);
    for (std::size_t i = 0; i < N; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      std::vector<double> dist(N);
      for (std::size_t j = 0; j < N; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        dist[j] = sq(ii) + sq(jj) - 2.0 * gram(ii, jj);
      }
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });
      RVector acc = RVector::Zero(data.rows());
      for (std::size_t t = 0; t < k; ++t) acc += resid.col(static_cast<Eigen::Index>(order[t]));
      var.col(ii) = acc / static_cast<double>(k);
    }
  }
  var.array() += cfg.variance_floor;

  std::vector<AtlasComponent> comps(N);
  for (std::size_t i = 0; i < N; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    comps[i] = {1.0 / static_cast<double>(N), means.col(ii), var.col(ii)};
  }
  const double rho = cfg.rho > 0 ? cfg.rho : median_heuristic_rho(comps);
  return LatentAtlas(std::move(comps), rho, decoder_map(model), model.dims().latent_dim);
}

TrainResult train(const CVaeModel& model, const RMatrix& data, const TrainConfig& cfg) {
  cfg.validate();
  require_dim(data.rows(), model.dims().data_dim, "data rows");
  const Eigen::Index N = data.cols();
  if (N == 0) throw Error(ErrorCode::kInvalidArgument, "empty training set");

  TrainResult res;
  res.model = model;
  CVaeModel& m = res.model;
  const Eigen::Index d = m.dims().latent_dim;
  RVector velocity = RVector::Zero(m.parameter_count());
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  std::optional<GeometrySnapshot> geometry;

  auto refresh = [&] {
    auto atlas = std::make_shared<const LatentAtlas>(build_atlas(m, data, cfg, derive_seed(cfg.seed, 100 + res.refreshes)));
    if (cfg.geometry_mode == GeometryMode::kStored) {
      const auto A = std::min<std::size_t>(static_cast<std::size_t>(cfg.geometry_anchors), static_cast<std::size_t>(N));
      const auto idx = subset_indices(static_cast<std::size_t>(N), A, derive_seed(cfg.seed, 200 + res.refreshes));
      CMatrix xs(data.rows(), static_cast<Eigen::Index>(A));
      for (std::size_t j = 0; j < A; ++j) xs.col(static_cast<Eigen::Index>(j)) = data.col(static_cast<Eigen::Index>(idx[j])).cast<cdouble>();
      const CMatrix mu = encode_batch(m, xs).mu;
      std::vector<CVector> anchors;
      for (Eigen::Index j = 0; j < mu.cols(); ++j) anchors.push_back(mu.col(j));
      geometry = GeometrySnapshot::stored(atlas, cfg.logdet_mode, cfg.fd_step, cfg.geometry_step, anchors);
      res.clamped_anchors += geometry->clamped_anchors();
      res.total_anchors += anchors.size();
    } else {
      geometry = GeometrySnapshot::exact(atlas, cfg.logdet_mode, cfg.fd_step, cfg.geometry_step);
    }
    ++res.refreshes;
  };

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(N));
  std::size_t iteration = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[shuffle_rng() % i]);

    EpochMetrics em;
    em.epoch = epoch;
    std::size_t batch_index = 0;
    for (Eigen::Index start = 0; start < N; start += cfg.batch_size, ++batch_index, ++iteration) {
      if (cfg.gamma > 0 && iteration % static_cast<std::size_t>(cfg.metric_refresh_every) == 0) refresh();
      const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, N - start);
      RMatrix batch(data.rows(), B);
      for (Eigen::Index j = 0; j < B; ++j) batch.col(j) = data.col(perm[static_cast<std::size_t>(start + j)]);
      const Noise noise = Noise::draw(d, B, derive_seed(cfg.seed, 1000000 + iteration));
      const LossAndGradient lg =
          loss_and_gradient(m, batch, geometry ? &*geometry : nullptr, cfg, noise, true);
      if (!std::isfinite(lg.loss.total) || !lg.gradient.allFinite()) {
        throw Error(ErrorCode::kNonFiniteLoss, "batch " + std::to_string(batch_index) + " of epoch " +
                                                   std::to_string(epoch) + " (iteration " +
                                                   std::to_string(iteration) + ")");
      }
      velocity = cfg.momentum * velocity - cfg.learning_rate * lg.gradient;
      m.params() += velocity;

      const auto w = static_cast<double>(B);
      em.reconstruction += w * lg.loss.reconstruction;
      em.kl += w * lg.loss.kl;
      em.geometric += w * lg.loss.geometric;
      em.total += w * lg.loss.total;
      em.eps_diag += w * lg.eps_diag;
    }
    const double inv = 1.0 / static_cast<double>(N);
    em.reconstruction *= inv;
    em.kl *= inv;
    em.geometric *= inv;
    em.total *= inv;
    em.eps_diag *= inv;
    res.log.push_back(em);
  }
  res.atlas.emplace(build_atlas(m, data, cfg, derive_seed(cfg.seed, 99)));
  return res;
}

// --- curvature regularizer -------------------------------------------------

double ricci_penalty(const CMatrix& ric) {
  const Eigen::Index d = ric.rows();
  const CMatrix a = cdouble(0.0, 0.5) * CMatrix::Identity(d, d) + 0.5 * ric;
  return a.norm();
}

double ricci_penalty_trace(const CMatrix& ric) {
  // Tr(A A^H) = d/4 + |Ric|_F^2 / 4 + Im Tr(Ric) / 2
  const auto d = static_cast<double>(ric.rows());
  const double t = d / 4.0 + ric.squaredNorm() / 4.0 + 0.5 * ric.trace().imag();
  return std::sqrt(std::max(t, 0.0));
}

double ricci_regularizer(const std::vector<CVector>& z_batch, const LatentAtlas& atlas,
                         std::optional<double> fd_step) {
  if (z_batch.empty()) return 0.0;
  std::vector<double> vals(z_batch.size());
  detail::for_each_shard(z_batch.size(), [&](std::size_t j) {
    vals[j] = ricci_penalty(ricci_logdet(atlas, z_batch[j], fd_step).dense());
  });
  return std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
}

// --- checkpoint --------------------------------------------------------------

std::vector<std::uint8_t> serialize_model(const CVaeModel& model) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(static_cast<std::uint64_t>(model.dims().data_dim));
  w.u64(static_cast<std::uint64_t>(model.dims().latent_dim));
  w.u64(static_cast<std::uint64_t>(model.dims().hidden));
  w.u32(model.activation() == Activation::kSplitTanh ? 0 : 1);
  w.u64(static_cast<std::uint64_t>(model.parameter_count()));
  for (Eigen::Index i = 0; i < model.parameter_count(); ++i) w.f64(model.params()(i));
  return w.take();
}

CVaeModel deserialize_model(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kCheckpointMagic)) throw Error(ErrorCode::kBadMagic, "not a CVAE checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kBadMagic, "unsupported checkpoint version " + std::to_string(version));
  }
  CVaeDims dims;
  dims.data_dim = static_cast<Eigen::Index>(r.u64());
  dims.latent_dim = static_cast<Eigen::Index>(r.u64());
  dims.hidden = static_cast<Eigen::Index>(r.u64());
  const std::uint32_t act = r.u32();
  if (act > 1) throw Error(ErrorCode::kBadMagic, "unknown activation code " + std::to_string(act));
  CVaeModel m(dims, act == 0 ? Activation::kSplitTanh : Activation::kIdentity);
  const std::uint64_t count = r.u64();
  if (count != static_cast<std::uint64_t>(m.parameter_count())) {
    throw Error(ErrorCode::kDimensionMismatch, "parameter count does not match the stored dimensions");
  }
  for (Eigen::Index i = 0; i < m.parameter_count(); ++i) m.params()(i) = r.f64();
  return m;
}

void save_checkpoint(const CVaeModel& model, const std::string& path, const std::string& sidecar) {
  write_file_bytes(path, serialize_model(model));
  if (!sidecar.empty()) write_text_file(path + ".txt", sidecar);
}

CVaeModel load_checkpoint(const std::string& path) { return deserialize_model(read_file_bytes(path)); }

std::string metrics_csv_rows(const std::vector<EpochMetrics>& log) {
  std::string s = "epoch,reconstruction,kl,geometric,total,eps_diag\n";
  for (const auto& e : log) {
    s += std::to_string(e.epoch) + "," + fmt(e.reconstruction) + "," + fmt(e.kl) + "," + fmt(e.geometric) + "," +
         fmt(e.total) + "," + fmt(e.eps_diag) + "\n";
  }
  return s;
}

}  // namespace kvae
