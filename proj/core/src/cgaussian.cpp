#include "kvae/cgaussian.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "kvae/error.hpp"

namespace kvae {

namespace {

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

void require_circular(const ComplexGaussianParams& p) {
  if (!p.is_circular()) {
    throw Error(ErrorCode::kRelationNotSupported, "relation parameter must be zero");
  }
}

void require_valid_relation(const ComplexGaussianParams& p) {
  for (Eigen::Index k = 0; k < p.dim(); ++k) {
    if (!(std::abs(p.delta(k)) < p.sigma(k))) {
      throw Error(ErrorCode::kInvalidRelation, "|delta| >= sigma at index " + std::to_string(k));
    }
  }
}

// Running mean and variance of a complex statistic (Welford).
struct ComplexAccumulator {
  std::size_t n = 0;
  cdouble mean{0.0, 0.0};
  double m2_re = 0.0;
  double m2_im = 0.0;

  void add(cdouble x) {
    ++n;
    const cdouble d = x - mean;
    mean += d / static_cast<double>(n);
    const cdouble d2 = x - mean;
    m2_re += d.real() * d2.real();
    m2_im += d.imag() * d2.imag();
  }

  double standard_error() const {
    if (n < 2) return 0.0;
    const double var = (m2_re + m2_im) / static_cast<double>(n - 1);
    return std::sqrt(var / static_cast<double>(n));
  }
};

}  // namespace

ComplexGaussianParams ComplexGaussianParams::circular(CVector mu, RVector sigma) {
  ComplexGaussianParams p;
  p.delta = CVector::Zero(mu.size());
  p.mu = std::move(mu);
  p.sigma = std::move(sigma);
  p.validate();
  return p;
}

bool ComplexGaussianParams::is_circular() const {
  return delta.size() == 0 || (delta.array() == cdouble(0.0, 0.0)).all();
}

void ComplexGaussianParams::validate() const {
  require_same_dim(mu.size(), sigma.size(), "mu/sigma");
  if (delta.size() != 0) require_same_dim(mu.size(), delta.size(), "mu/delta");
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    if (!(sigma(k) > 0.0) || !std::isfinite(sigma(k))) {
      throw Error(ErrorCode::kInvalidArgument, "sigma must be positive and finite");
    }
  }
  if (delta.size() != 0) require_valid_relation(*this);
}

MomentIdentity moment_identity_from_name(std::string_view name) {
  for (MomentIdentity id : kAllMomentIdentities) {
    if (moment_identity_name(id) == name) return id;
  }
  throw Error(ErrorCode::kUnknownIdentity, std::string(name));
}

std::string_view moment_identity_name(MomentIdentity id) {
  switch (id) {
    case MomentIdentity::kMean: return "mean";
    case MomentIdentity::kCovariance: return "covariance";
    case MomentIdentity::kQuadratic: return "quadratic";
    case MomentIdentity::kQuartic: return "quartic";
    case MomentIdentity::kSandwich: return "sandwich";
    case MomentIdentity::kBilinear: return "bilinear";
  }
  return "?";
}

double log_density(const ComplexGaussianParams& p, const CVector& x) {
  require_same_dim(p.dim(), x.size(), "log_density");
  require_circular(p);
  double quad = 0.0;
  double logdet = 0.0;
  for (Eigen::Index k = 0; k < p.dim(); ++k) {
    quad += std::norm(x(k) - p.mu(k)) / p.sigma(k);
    logdet += std::log(p.sigma(k));
  }
  return -quad - logdet - static_cast<double>(p.dim()) * std::log(std::numbers::pi);
}

std::vector<CVector> sample(const ComplexGaussianParams& p, std::size_t count, Rng& rng,
                            bool centred) {
  const Eigen::Index n = p.dim();
  // Per coordinate: Var(Re) = (s + Re d)/2, Var(Im) = (s - Re d)/2, Cov = Im d / 2.
  RVector l11(n), l21(n), l22(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double s = p.sigma(k);
    const cdouble d = p.delta.size() ? p.delta(k) : cdouble(0.0, 0.0);
    const double vr = 0.5 * (s + d.real());
    const double c = 0.5 * d.imag();
    l11(k) = std::sqrt(vr);
    l21(k) = c / l11(k);
    l22(k) = std::sqrt(std::max(0.0, 0.5 * (s - d.real()) - l21(k) * l21(k)));
  }
  std::normal_distribution<double> nd;
  std::vector<CVector> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    CVector v(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double n1 = nd(rng);
      const double n2 = nd(rng);
      v(k) = cdouble(l11(k) * n1, l21(k) * n1 + l22(k) * n2);
    }
    if (!centred) v += p.mu;
    out.push_back(std::move(v));
  }
  return out;
}

MomentCheck moment_oracle(const ComplexGaussianParams& p, const MomentQuery& q,
                          MomentIdentity which, std::size_t mc_samples, Rng& rng) {
  require_circular(p);
  if (mc_samples == 0) throw Error(ErrorCode::kInvalidArgument, "mc_samples must be positive");
  const Eigen::Index n = p.dim();
  const bool needs_ab = which != MomentIdentity::kQuadratic && which != MomentIdentity::kQuartic;
  const bool needs_m = which != MomentIdentity::kMean && which != MomentIdentity::kCovariance;
  const bool needs_n = which == MomentIdentity::kQuartic || which == MomentIdentity::kBilinear;
  if (needs_ab) {
    require_same_dim(q.a.size(), n, "query a");
    if (which != MomentIdentity::kMean) require_same_dim(q.b.size(), n, "query b");
  }
  if (needs_m) {
    require_same_dim(q.A.rows(), n, "query M rows");
    require_same_dim(q.A.cols(), n, "query M cols");
  }
  if (needs_n) {
    require_same_dim(q.B.rows(), n, "query N rows");
    require_same_dim(q.B.cols(), n, "query N cols");
  }

  const CMatrix S = p.sigma.cast<cdouble>().asDiagonal();
  cdouble closed{0.0, 0.0};
  switch (which) {
    case MomentIdentity::kMean: break;
    case MomentIdentity::kCovariance: closed = q.a.dot(S * q.b); break;
    case MomentIdentity::kQuadratic: closed = (q.A * S).trace(); break;
    case MomentIdentity::kQuartic:
      closed = (q.A * S * q.B * S).trace() + (q.A * S).trace() * (q.B * S).trace();
      break;
    case MomentIdentity::kSandwich:
      closed = q.a.dot(S * q.A * S * q.b) + q.a.dot(S * q.b) * (q.A * S).trace();
      break;
    case MomentIdentity::kBilinear: closed = q.a.dot(q.A * S * q.B * q.b); break;
  }

  // Precomputed row vectors keep the per-draw statistic O(n) or O(n^2).
  CVector aM, Nb;
  if (which == MomentIdentity::kBilinear) {
    aM = q.A.adjoint() * q.a;  // a^H M v == (M^H a)^H v
    Nb = q.B * q.b;
  }

  ComplexAccumulator acc;
  const RVector scale = (0.5 * p.sigma).cwiseSqrt();
  std::normal_distribution<double> nd;
  CVector v(n);
  for (std::size_t i = 0; i < mc_samples; ++i) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double re = nd(rng);
      v(k) = cdouble(scale(k) * re, scale(k) * nd(rng));
    }
    cdouble stat;
    switch (which) {
      case MomentIdentity::kMean: stat = q.a.dot(v); break;
      case MomentIdentity::kCovariance: stat = q.a.dot(v) * v.dot(q.b); break;
      case MomentIdentity::kQuadratic: stat = v.dot(q.A * v); break;
      case MomentIdentity::kQuartic: stat = v.dot(q.A * v) * v.dot(q.B * v); break;
      case MomentIdentity::kSandwich: stat = q.a.dot(v) * v.dot(q.A * v) * v.dot(q.b); break;
      case MomentIdentity::kBilinear: stat = aM.dot(v) * v.dot(Nb); break;
    }
    acc.add(stat);
  }
  return MomentCheck{closed, acc.mean, acc.standard_error()};
}

double kl_complex_gaussian(const ComplexGaussianParams& p, const ComplexGaussianParams& q) {
  require_same_dim(p.dim(), q.dim(), "kl_complex_gaussian");
  require_circular(p);
  require_circular(q);
  double kl = 0.0;
  for (Eigen::Index k = 0; k < p.dim(); ++k) {
    const double r = p.sigma(k) / q.sigma(k);
    kl += r + std::norm(p.mu(k) - q.mu(k)) / q.sigma(k) - 1.0 - std::log(r);
  }
  return kl;
}

double kl_to_standard_prior(const ComplexGaussianParams& p) {
  require_same_dim(p.mu.size(), p.sigma.size(), "kl_to_standard_prior");
  const bool has_delta = p.delta.size() != 0;
  if (has_delta) {
    require_same_dim(p.mu.size(), p.delta.size(), "kl_to_standard_prior");
    require_valid_relation(p);
  }
  double kl = p.mu.squaredNorm();
  for (Eigen::Index k = 0; k < p.sigma.size(); ++k) {
    const double s = p.sigma(k);
    const double d2 = has_delta ? std::norm(p.delta(k)) : 0.0;
    kl += std::abs(s - 1.0 - 0.5 * std::log(s * s - d2));
  }
  return kl;
}

Reparameterization reparameterization_coefficients(const ComplexGaussianParams& p) {
  p.validate();
  const Eigen::Index d = p.dim();
  Reparameterization r{CVector(d), CVector(d)};
  for (Eigen::Index k = 0; k < d; ++k) {
    const double s = p.sigma(k);
    const cdouble dl = p.delta.size() ? p.delta(k) : cdouble(0.0, 0.0);
    const double den = 2.0 * s + 2.0 * dl.real();
    r.psi_im(k) = (s + dl) / den;
    r.psi_re(k) = cdouble(0.0, std::sqrt(s * s - std::norm(dl)) / den);
  }
  return r;
}

CVector reparameterize(const ComplexGaussianParams& p, const RVector& eps_re,
                       const RVector& eps_im) {
  require_same_dim(eps_re.size(), p.dim(), "eps_re");
  require_same_dim(eps_im.size(), p.dim(), "eps_im");
  const Reparameterization r = reparameterization_coefficients(p);
  return p.mu + (r.psi_re.array() * eps_re.cast<cdouble>().array()).matrix() +
         (r.psi_im.array() * eps_im.cast<cdouble>().array()).matrix();
}

}  // namespace kvae
