#include "kvae/kahler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvae/error.hpp"
#include "parallel.hpp"

namespace kvae {

namespace {

double log_sum_exp(const RVector& u) {
  const double mx = u.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((u.array() - mx).exp().sum());
}

RVector softmax(const RVector& u) {
  const double mx = u.maxCoeff();
  RVector e = (u.array() - mx).exp().matrix();
  return e / e.sum();
}

double sign_value(ExponentSign s) { return s == ExponentSign::kNegative ? -1.0 : 1.0; }

RVector exponent_logits(const LatentAtlas& atlas, const RVector& psi) {
  const double r2 = atlas.rho() * atlas.rho();
  return atlas.log_weights() + (sign_value(atlas.sign()) / r2) * psi;
}

// Decoder value and Jacobians at z, shared by every component.
struct LocalDecoder {
  CVector x;
  CMatrix J;   // dx/dz
  CMatrix Jt;  // d conj(x)/dz
};

LocalDecoder decode_local(const LatentAtlas& atlas, const CVector& z, std::optional<double> step) {
  if (z.size() != atlas.latent_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "latent point has wrong dimension");
  }
  const JacobianWithValue jv = wirtinger_jacobian_at(atlas.decoder(), z, step);
  if (jv.value.size() != atlas.data_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "decoder output does not match atlas data dimension");
  }
  return {jv.value, jv.jacobian.d_z, jv.jacobian.conj_d_z()};
}

struct MixtureParts {
  RVector w;    // N
  CMatrix G;    // N x d, G(i, b) = dPsi_i / dz_b
  RVector dw;   // n, sum_i w_i / sigma_ik
  CVector gbar; // d
};

MixtureParts mixture_parts(const LatentAtlas& atlas, const LocalDecoder& loc) {
  MixtureParts p;
  const CMatrix V = (-atlas.means()).colwise() + loc.x;  // v_i = x - mu_i
  const CMatrix W = V.cwiseProduct(atlas.inv_variances().cast<cdouble>());
  const RVector psi = V.cwiseAbs2().cwiseProduct(atlas.inv_variances()).colwise().sum().transpose();
  p.w = softmax(exponent_logits(atlas, psi));
  // dPsi_i/dz_b = sum_k conj(v_ik) J_kb / s_ik + v_ik Jt_kb / s_ik
  p.G = W.adjoint() * loc.J + W.transpose() * loc.Jt;
  p.dw = atlas.inv_variances() * p.w;
  p.gbar = p.G.transpose() * p.w.cast<cdouble>();
  return p;
}

HermitianMatrix expectation_term(const LocalDecoder& loc, const MixtureParts& p) {
  const auto D = p.dw.cast<cdouble>().asDiagonal();
  return HermitianMatrix(loc.J.adjoint() * D * loc.J + loc.Jt.adjoint() * D * loc.Jt);
}

HermitianMatrix covariance_term(const MixtureParts& p) {
  const CMatrix wG = p.w.cast<cdouble>().asDiagonal() * p.G;
  return HermitianMatrix(p.G.adjoint() * wG - p.gbar.conjugate() * p.gbar.transpose());
}

}  // namespace

LatentAtlas::LatentAtlas(std::vector<AtlasComponent> components, double rho, ComplexMap decoder,
                         Eigen::Index latent_dim, ExponentSign sign, double gamma_floor)
    : rho_(rho), decoder_(std::move(decoder)), latent_dim_(latent_dim), sign_(sign),
      gamma_floor_(gamma_floor) {
  if (components.empty()) throw Error(ErrorCode::kEmptyAtlas, "atlas has no components");
  if (!(rho > 0.0) || !std::isfinite(rho)) throw Error(ErrorCode::kInvalidArgument, "rho must be positive");
  if (latent_dim <= 0) throw Error(ErrorCode::kInvalidArgument, "latent dimension must be positive");
  const Eigen::Index n = components.front().mean.size();
  const Eigen::Index N = static_cast<Eigen::Index>(components.size());
  means_.resize(n, N);
  var_.resize(n, N);
  inv_var_.resize(n, N);
  weights_.resize(N);
  log_weights_.resize(N);
  double total = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const AtlasComponent& c = components[i];
    if (c.mean.size() != n || c.variance.size() != n) {
      throw Error(ErrorCode::kDimensionMismatch, "component " + std::to_string(i) + " has wrong dimension");
    }
    if (!(c.weight > 0.0)) throw Error(ErrorCode::kInvalidArgument, "component weights must be positive");
    if (!c.mean.allFinite()) throw Error(ErrorCode::kInvalidArgument, "component mean not finite");
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!(c.variance(k) >= gamma_floor) || !std::isfinite(c.variance(k)) || !(c.variance(k) > 0.0)) {
        throw Error(ErrorCode::kInvalidArgument, "component variance below floor");
      }
    }
    means_.col(i) = c.mean;
    var_.col(i) = c.variance;
    inv_var_.col(i) = c.variance.cwiseInverse();
    weights_(i) = c.weight;
    log_weights_(i) = std::log(c.weight);
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidArgument, "component weights must sum to 1");
  }
}

AtlasComponent LatentAtlas::component(Eigen::Index i) const {
  if (i < 0 || i >= size()) throw Error(ErrorCode::kIndexOutOfRange, "component " + std::to_string(i));
  return {weights_(i), means_.col(i), var_.col(i)};
}

const ComplexMap& LatentAtlas::decoder() const {
  if (!decoder_) throw Error(ErrorCode::kInvalidArgument, "atlas has no decoder attached");
  return decoder_;
}

LatentAtlas LatentAtlas::with_decoder(ComplexMap decoder) const {
  LatentAtlas a = *this;
  a.decoder_ = std::move(decoder);
  return a;
}

LatentAtlas LatentAtlas::with_rho(double rho) const {
  if (!(rho > 0.0)) throw Error(ErrorCode::kInvalidArgument, "rho must be positive");
  LatentAtlas a = *this;
  a.rho_ = rho;
  return a;
}

LatentAtlas LatentAtlas::with_sign(ExponentSign sign) const {
  LatentAtlas a = *this;
  a.sign_ = sign;
  return a;
}

double median_heuristic_rho(const std::vector<AtlasComponent>& components) {
  const std::size_t m = std::min<std::size_t>(components.size(), 256);
  std::vector<double> dist;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const auto& a = components[i];
      const auto& b = components[j];
      dist.push_back(std::sqrt((a.mean - b.mean).cwiseAbs2().cwiseQuotient(b.variance).sum()));
    }
  }
  if (dist.empty()) return 1.0;
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid > 0.0 ? *mid : 1.0;
}

RVector quad_forms_at(const LatentAtlas& atlas, const CVector& x) {
  if (x.size() != atlas.data_dim()) throw Error(ErrorCode::kDimensionMismatch, "data point dimension");
  const CMatrix V = (-atlas.means()).colwise() + x;
  return V.cwiseAbs2().cwiseProduct(atlas.inv_variances()).colwise().sum().transpose();
}

double quad_form(const LatentAtlas& atlas, Eigen::Index i, const CVector& z) {
  if (i < 0 || i >= atlas.size()) throw Error(ErrorCode::kIndexOutOfRange, "component " + std::to_string(i));
  const CVector x = atlas.decoder()(z);
  if (x.size() != atlas.data_dim()) throw Error(ErrorCode::kDimensionMismatch, "decoder output dimension");
  return (x - atlas.means().col(i)).cwiseAbs2().cwiseProduct(atlas.inv_variances().col(i)).sum();
}

double potential(const LatentAtlas& atlas, const CVector& z) {
  const RVector psi = quad_forms_at(atlas, atlas.decoder()(z));
  return atlas.rho() * atlas.rho() * log_sum_exp(exponent_logits(atlas, psi));
}

RVector weights_at(const LatentAtlas& atlas, const CVector& x) {
  return softmax(exponent_logits(atlas, quad_forms_at(atlas, x)));
}

RVector weights(const LatentAtlas& atlas, const CVector& z) {
  return weights_at(atlas, atlas.decoder()(z));
}

MixtureMetricReport mixture_metric(const LatentAtlas& atlas, const CVector& z,
                                   std::optional<double> fd_step) {
  const LocalDecoder loc = decode_local(atlas, z, fd_step);
  const MixtureParts p = mixture_parts(atlas, loc);
  HermitianMatrix e = expectation_term(loc, p);
  HermitianMatrix c = covariance_term(p);
  const double r2 = atlas.rho() * atlas.rho();
  HermitianMatrix h = e + c * (1.0 / r2);
  return {HermitianMetric{std::move(h), MetricProvenance::kMixture, z}, p.w, std::move(e), std::move(c)};
}

HermitianMatrix potential_levi_form(const LatentAtlas& atlas, const CVector& z,
                                    std::optional<double> fd_step) {
  const LocalDecoder loc = decode_local(atlas, z, fd_step);
  const MixtureParts p = mixture_parts(atlas, loc);
  const double r2 = atlas.rho() * atlas.rho();
  return expectation_term(loc, p) * sign_value(atlas.sign()) + covariance_term(p) * (1.0 / r2);
}

std::vector<CVector> canonical_directions(Eigen::Index n) {
  std::vector<CVector> out;
  for (Eigen::Index k = 0; k < n; ++k) out.push_back(CVector::Unit(n, k));
  return out;
}

cdouble mixture_metric_entry(const LatentAtlas& atlas, const CVector& x, const CMatrix& J,
                             const CMatrix& Jt, Eigen::Index a, Eigen::Index b) {
  const Eigen::Index N = atlas.size();
  if (x.size() != atlas.data_dim() || J.rows() != x.size() || Jt.rows() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "decoder value and Jacobians must match the atlas");
  }
  const auto Ja = J.col(a), Jb = J.col(b), Jta = Jt.col(a), Jtb = Jt.col(b);
  RVector logits(N);
  CVector Ga(N), Gb(N);
  const double s = sign_value(atlas.sign()) / (atlas.rho() * atlas.rho());
  // With u = Sigma_i^-1 (x - mu_i):  conj(u) J + u Jt = Re(u) (J + Jt) - i Im(u) (J - Jt),
  // so each component costs a handful of real multiply-adds per coordinate.
  const Eigen::Index n = x.size();
  const CVector Pa = Ja + Jta, Qa = cdouble(0.0, -1.0) * (Ja - Jta);
  const CVector Pb = Jb + Jtb, Qb = cdouble(0.0, -1.0) * (Jb - Jtb);
  for (Eigen::Index i = 0; i < N; ++i) {
    const cdouble* mu = atlas.means().col(i).data();
    const double* iv = atlas.inv_variances().col(i).data();
    double psi = 0.0;
    cdouble ga(0.0), gb(0.0);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double vr = x(k).real() - mu[k].real(), vi = x(k).imag() - mu[k].imag();
      const double ur = vr * iv[k], ui = vi * iv[k];
      psi += vr * ur + vi * ui;
      ga += ur * Pa(k) + ui * Qa(k);
      if (a != b) gb += ur * Pb(k) + ui * Qb(k);
    }
    logits(i) = atlas.log_weights()(i) + s * psi;
    Ga(i) = ga;
    Gb(i) = a == b ? ga : gb;
  }
  const RVector w = softmax(logits);
  const RVector dw = atlas.inv_variances() * w;
  const cdouble e = (dw.cast<cdouble>().array() *
                     (Ja.conjugate().array() * Jb.array() + Jta.conjugate().array() * Jtb.array()))
                        .sum();
  const CVector wc = w.cast<cdouble>();
  const cdouble ga = Ga.dot(wc);  // conj(gbar_a)
  const cdouble gb = wc.dot(Gb);  // gbar_b
  const cdouble c = (Ga.conjugate().array() * wc.array() * Gb.array()).sum() - ga * gb;
  return e + c / (atlas.rho() * atlas.rho());
}

Eigen::Index nearest_component(const LatentAtlas& atlas, const CVector& x) {
  if (x.size() != atlas.data_dim()) throw Error(ErrorCode::kDimensionMismatch, "query does not match atlas");
  Eigen::Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < atlas.size(); ++i) {
    const double d = (x - atlas.means().col(i)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

double nn_fisher_entry(const LatentAtlas& atlas, const CVector& x, const CMatrix& J, const CMatrix& Jt,
                       Eigen::Index a, double h) {
  const Eigen::Index c = nearest_component(atlas, x);
  const auto inv = atlas.inv_variances().col(c);
  const double mean_term = (inv.array() * (J.col(a).cwiseAbs2() + Jt.col(a).cwiseAbs2()).array()).sum();
  // dx for a real step h and an imaginary step i h in z_a
  const CVector dx_re = h * (J.col(a) + Jt.col(a).conjugate());
  const CVector dx_im = cdouble(0.0, h) * (J.col(a) - Jt.col(a).conjugate());
  auto log_var = [&](const CVector& q) {
    return atlas.variances().col(nearest_component(atlas, q)).array().log().matrix().eval();
  };
  const RVector gx = (log_var(x + dx_re) - log_var(x - dx_re)) / (2.0 * h);
  const RVector gy = (log_var(x + dx_im) - log_var(x - dx_im)) / (2.0 * h);
  const double cov_term = 0.25 * (gx.squaredNorm() + gy.squaredNorm());  // |(gx - i gy) / 2|^2
  return mean_term + cov_term;
}

HermitianMetric high_rank_proxy(const LatentAtlas& atlas, const CVector& z,
                                const std::vector<CVector>& directions,
                                std::optional<double> fd_step) {
  if (directions.empty()) throw Error(ErrorCode::kEmptyDirections, "no directions supplied");
  for (const auto& v : directions) {
    if (v.size() != atlas.data_dim()) throw Error(ErrorCode::kDimensionMismatch, "direction dimension");
  }
  // Whitening frozen at z: Sigma^-1/2 = sqrt(sum_i w_i(z) / sigma_i).
  const RVector w0 = weights(atlas, z);
  const RVector whiten = (atlas.inv_variances() * w0).cwiseSqrt();
  const ComplexMap F([&atlas, &whiten](const CVector& u) -> CVector {
    const CVector x = atlas.decoder()(u);
    const RVector w = weights_at(atlas, x);
    const CVector m = atlas.means() * w.cast<cdouble>();
    return whiten.cast<cdouble>().cwiseProduct(x - m);
  });
  const CMatrix JF = wirtinger_jacobian(F, z, fd_step).d_z;
  const Eigen::Index d = z.size();
  CMatrix acc = CMatrix::Zero(d, d);
  for (const auto& v : directions) {
    const CVector g = JF.adjoint() * v;
    acc.noalias() += g * g.adjoint();
  }
  const double r2 = atlas.rho() * atlas.rho();
  return {HermitianMatrix(acc * (r2 / static_cast<double>(directions.size()))), MetricProvenance::kProxy, z};
}

LogDetResult clamp_log_det(double raw) {
  LogDetResult r;
  r.raw = raw;
  if (std::isnan(raw)) raw = kLogDetClampLow;
  r.value = std::clamp(raw, kLogDetClampLow, kLogDetClampHigh);
  r.clamped = !(raw > kLogDetClampLow && raw < kLogDetClampHigh);
  return r;
}

LogDetResult log_det_metric(const LatentAtlas& atlas, const CVector& z, LogDetMode mode,
                            std::optional<double> fd_step) {
  const LocalDecoder loc = decode_local(atlas, z, fd_step);
  const MixtureParts p = mixture_parts(atlas, loc);
  const double inv_r2 = 1.0 / (atlas.rho() * atlas.rho());
  const double neg_inf = -std::numeric_limits<double>::infinity();
  if (mode == LogDetMode::kFull) {
    const HermitianMatrix h = expectation_term(loc, p) + covariance_term(p) * inv_r2;
    try {
      return clamp_log_det(logdet(h));
    } catch (const Error&) {
      return clamp_log_det(neg_inf);
    }
  }
  const RVector e = (loc.J.cwiseAbs2() + loc.Jt.cwiseAbs2()).transpose() * p.dw;
  const RVector c = p.G.cwiseAbs2().transpose() * p.w - p.gbar.cwiseAbs2();
  double raw = 0.0;
  for (Eigen::Index a = 0; a < e.size(); ++a) {
    const double haa = e(a) + inv_r2 * c(a);
    if (!(haa > 0.0)) return clamp_log_det(neg_inf);
    raw += std::log(haa);
  }
  return clamp_log_det(raw);
}

PshReport psh_certificate(const LatentAtlas& atlas, const std::vector<CVector>& points,
                          const PshOptions& options) {
  PshReport r;
  if (points.empty()) return r;
  std::vector<double> scales;
  r.min_eigenvalue = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < points.size(); ++j) {
    const HermitianMatrix h = options.potential_override
                                  ? mixed_hessian_scalar(*options.potential_override, points[j], options.fd_step)
                                  : mixture_metric(atlas, points[j], options.fd_step).metric.matrix;
    const RVector lam = eigenvalues(h);
    scales.push_back(std::max(std::abs(lam(0)), std::abs(lam(lam.size() - 1))));
    if (lam(0) < r.min_eigenvalue) {
      r.min_eigenvalue = lam(0);
      r.worst_point = j;
    }
  }
  auto mid = scales.begin() + static_cast<std::ptrdiff_t>(scales.size() / 2);
  std::nth_element(scales.begin(), mid, scales.end());
  r.median_scale = *mid;
  r.threshold = -1e-6 * r.median_scale;
  r.passed = r.min_eigenvalue >= r.threshold;
  return r;
}

double default_ricci_step(const CVector& z) { return 10.0 * default_fd_step(z); }

HermitianMatrix ricci_form(const MetricField& metric, const CVector& z, std::optional<double> fd_step) {
  const double h = fd_step.value_or(default_ricci_step(z));
  return mixed_hessian_scalar([&metric](const CVector& w) { return logdet(metric(w)); }, z, h) * -1.0;
}

HermitianMatrix ricci_logdet(const LatentAtlas& atlas, const CVector& z, std::optional<double> fd_step) {
  return ricci_form([&atlas](const CVector& w) { return mixture_metric(atlas, w).metric.matrix; }, z,
                    fd_step);
}

AlignmentReport jacobian_alignment(const LatentAtlas& atlas, const std::vector<CVector>& points,
                                   std::optional<double> fd_step, bool allow_rank_deficient) {
  if (points.size() < 2) throw Error(ErrorCode::kDegenerateFit, "need at least two points");
  const Eigen::Index n = atlas.data_dim();
  const Eigen::Index d = atlas.latent_dim();
  std::vector<CVector> u(points.size());
  std::vector<CMatrix> jac(points.size());
  for (std::size_t j = 0; j < points.size(); ++j) {
    const LocalDecoder loc = decode_local(atlas, points[j], fd_step);
    const RVector w = weights_at(atlas, loc.x);
    Eigen::Index i_star = 0;
    w.maxCoeff(&i_star);
    u[j] = (loc.x - atlas.means().col(i_star)).cwiseProduct(atlas.inv_variances().col(i_star).cast<cdouble>());
    jac[j] = loc.J;
  }
  const Eigen::Index fit = static_cast<Eigen::Index>((points.size() + 1) / 2);
  const Eigen::Index eval = static_cast<Eigen::Index>(points.size() / 2);
  CMatrix U(fit, n);  // rows: (Sigma^-1 v)^T on fit points
  for (Eigen::Index r = 0; r < fit; ++r) U.row(r) = u[2 * r].transpose();
  Eigen::CompleteOrthogonalDecomposition<CMatrix> cod(U);
  if (cod.rank() < n && !allow_rank_deficient) {
    throw Error(ErrorCode::kDegenerateFit, "design matrix rank " + std::to_string(cod.rank()) + " < " +
                                               std::to_string(n));
  }
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index a = 0; a < d; ++a) {
    CMatrix Y(fit, n);
    for (Eigen::Index r = 0; r < fit; ++r) Y.row(r) = jac[2 * r].col(a).transpose();
    const CMatrix Mt = cod.solve(Y);  // U M^T ~ Y
    for (Eigen::Index r = 0; r < eval; ++r) {
      const CVector y = jac[2 * r + 1].col(a);
      const CVector yhat = Mt.transpose() * u[2 * r + 1];
      const double den = y.norm() * yhat.norm();
      if (den == 0.0) continue;
      total += y.dot(yhat).real() / den;
      ++count;
    }
  }
  return {count ? total / static_cast<double>(count) : 0.0, static_cast<std::size_t>(fit),
          static_cast<std::size_t>(eval), cod.rank()};
}

FisherPotentialIdentity fisher_potential_identity(const DecoderStatModel& model, const CVector& z,
                                                  std::size_t mc_samples, double rho, std::uint64_t seed,
                                                  std::optional<double> fd_step) {
  if (mc_samples == 0) throw Error(ErrorCode::kInvalidArgument, "sample count must be positive");
  const Eigen::Index d = z.size();
  const double h = fd_step.value_or(default_fd_step(z));
  const double r2 = rho * rho;
  const ComplexGaussianParams centre = model.at(z);

  struct Partial {
    CMatrix hess = CMatrix();
    CMatrix outer = CMatrix();
    CVector score = CVector();
    CMatrix sq = CMatrix();  // entrywise |Y|^2 for the standard error
    CMatrix lin = CMatrix();
  };
  constexpr std::size_t kShards = 16;
  const std::size_t shards = std::min<std::size_t>(kShards, mc_samples);
  std::vector<Partial> parts(shards);
  detail::for_each_shard(shards, [&](std::size_t k) {
    Partial& P = parts[k];
    P.hess = CMatrix::Zero(d, d);
    P.outer = CMatrix::Zero(d, d);
    P.score = CVector::Zero(d);
    P.sq = CMatrix::Zero(d, d);
    P.lin = CMatrix::Zero(d, d);
    // Stencil points repeat across draws, so decoder statistics are memoized.
    std::vector<std::pair<CVector, ComplexGaussianParams>> cache;
    auto params_at = [&](const CVector& w) -> const ComplexGaussianParams& {
      for (const auto& [pt, prm] : cache)
        if (pt == w) return prm;
      cache.emplace_back(w, model.at(w));
      return cache.back().second;
    };
    Rng rng(derive_seed(seed, k));
    const std::size_t begin = mc_samples * k / shards;
    const std::size_t end = mc_samples * (k + 1) / shards;
    const cdouble I(0.0, 1.0);
    for (std::size_t i = begin; i < end; ++i) {
      const CVector x = sample(centre, 1, rng).front();
      const ScalarField psi = [&](const CVector& w) { return -r2 * log_density(params_at(w), x); };
      const CMatrix H = levi_from_real_hessian(real_hessian(psi, z, h)).dense();
      const RVector g = real_gradient(psi, z, h);
      CVector s(d);
      for (Eigen::Index a = 0; a < d; ++a) s(a) = 0.5 * (g(a) - I * g(d + a));
      const CMatrix O = s.conjugate() * s.transpose();
      P.hess += H;
      P.outer += O;
      P.score += s;
      const CMatrix Y = H + O / r2;
      P.lin += Y;
      P.sq += Y.cwiseAbs2().cast<cdouble>();
    }
  });
  CMatrix hess = CMatrix::Zero(d, d), outer = CMatrix::Zero(d, d), lin = CMatrix::Zero(d, d);
  CMatrix sq = CMatrix::Zero(d, d);
  CVector score = CVector::Zero(d);
  for (const auto& P : parts) {
    hess += P.hess;
    outer += P.outer;
    score += P.score;
    lin += P.lin;
    sq += P.sq;
  }
  const double N = static_cast<double>(mc_samples);
  hess /= N;
  outer /= N;
  score /= N;
  lin /= N;
  sq /= N;
  const CMatrix cov = outer - score.conjugate() * score.transpose();
  const double var_sum = (sq.real() - lin.cwiseAbs2()).sum();

  const FisherTerms terms = fisher_terms(model, z, fd_step);
  FisherPotentialIdentity out;
  out.lhs = HermitianMatrix(hess + cov / r2);
  out.rhs = terms.exact() * (2.0 * r2);
  out.rhs_displayed = terms.displayed() * (2.0 * r2);
  out.lhs_standard_error = std::sqrt(std::max(0.0, var_sum) / N);
  return out;
}

}  // namespace kvae
