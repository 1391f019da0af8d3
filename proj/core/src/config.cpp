#include "kvae/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kvae/error.hpp"

namespace kvae {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* type) {
  throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "': '" + value + "' is not " + type);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return x;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T x{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return x;
}

}  // namespace

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      // data
      "dataset", "data_dir", "train_count", "eval_count", "height", "width", "subset_seed",
      "clusters", "cluster_dim", "separation", "noise",
      // model
      "hidden", "latent_dim", "activation", "init_scale", "checkpoint",
      // training
      "beta", "gamma", "refresh_every", "rho", "epochs", "batch_size", "learning_rate", "momentum",
      "seed", "imag_penalty", "geometry_mode", "geometry_logdet", "geometry_anchors", "fd_step",
      "geometry_step", "atlas_size", "atlas_knn", "atlas_variance", "variance_floor",
      "gate_tolerance",
      // sampler
      "alpha", "lambda", "temperature", "jitter", "overdraw", "normalize", "sampler_logdet",
      "max_clamp_rate", "samples",
      // experiments
      "cdf_points", "cdf_components", "ks_threshold", "runtime_sizes", "runtime_reps",
      "runtime_data_dim", "runtime_latent_dim", "feature_space", "eigen_k", "eigen_points",
      "diag_points", "hist_bins"};
  return keys;
}

Config Config::parse(std::string_view text) {
  Config c;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    c.set(trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Config::set(const std::string& key, const std::string& value) {
  const auto& keys = known_config_keys();
  if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
    throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
  values_[key] = value;
}

void Config::apply_override(std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw Error(ErrorCode::kInvalidArgument, "override '" + std::string(assignment) + "' is not key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_double(key, it->second);
}

long long Config::get_int(const std::string& key, long long fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_integer<long long>(key, it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_integer<std::uint64_t>(key, it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
  if (it->second == "false" || it->second == "0" || it->second == "no") return false;
  bad_value(key, it->second, "a boolean");
}

std::vector<double> Config::get_list(const std::string& key, const std::vector<double>& fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::stringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
  return out;
}

std::string Config::canonical() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

std::string Config::hash() const { return sha1_hex(canonical()).substr(0, 12); }

std::string sha1_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, data.data(), data.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(ErrorCode::kIo, "SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string git_blob_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  return sha1_hex(blob);
}

TrainConfig train_config_from(const Config& c) {
  TrainConfig t;
  t.beta = c.get_double("beta", t.beta);
  t.gamma = c.get_double("gamma", t.gamma);
  t.metric_refresh_every = static_cast<int>(c.get_int("refresh_every", t.metric_refresh_every));
  t.rho = c.get_double("rho", t.rho);
  t.epochs = static_cast<int>(c.get_int("epochs", t.epochs));
  t.batch_size = static_cast<int>(c.get_int("batch_size", t.batch_size));
  t.learning_rate = c.get_double("learning_rate", t.learning_rate);
  t.momentum = c.get_double("momentum", t.momentum);
  t.seed = c.get_u64("seed", t.seed);
  t.imag_penalty = c.get_double("imag_penalty", t.imag_penalty);
  const std::string gm = c.get("geometry_mode", "stored");
  if (gm == "stored") {
    t.geometry_mode = GeometryMode::kStored;
  } else if (gm == "per_iteration") {
    t.geometry_mode = GeometryMode::kPerIteration;
  } else {
    bad_value("geometry_mode", gm, "stored|per_iteration");
  }
  const std::string gl = c.get("geometry_logdet", "full");
  if (gl != "full" && gl != "diag") bad_value("geometry_logdet", gl, "full|diag");
  t.logdet_mode = gl == "full" ? LogDetMode::kFull : LogDetMode::kDiagonal;
  t.geometry_anchors = static_cast<int>(c.get_int("geometry_anchors", t.geometry_anchors));
  t.fd_step = c.get_double("fd_step", t.fd_step);
  t.geometry_step = c.get_double("geometry_step", t.geometry_step);
  t.atlas_size = static_cast<int>(c.get_int("atlas_size", t.atlas_size));
  t.atlas_knn = static_cast<int>(c.get_int("atlas_knn", t.atlas_knn));
  const std::string av = c.get("atlas_variance", "local");
  if (av != "local" && av != "global") bad_value("atlas_variance", av, "local|global");
  t.atlas_variance = av == "local" ? AtlasVarianceMode::kLocal : AtlasVarianceMode::kGlobal;
  t.variance_floor = c.get_double("variance_floor", t.variance_floor);
  t.validate();
  return t;
}

SamplerConfig sampler_config_from(const Config& c) {
  SamplerConfig s;
  s.overdraw = static_cast<int>(c.get_int("overdraw", s.overdraw));
  s.alpha = c.get_double("alpha", s.alpha);
  s.lambda = c.get_double("lambda", s.lambda);
  s.temperature = c.get_double("temperature", s.temperature);
  s.jitter = c.get_double("jitter", s.jitter);
  const std::string nm = c.get("normalize", "none");
  if (nm != "none" && nm != "mean") bad_value("normalize", nm, "none|mean");
  s.normalize = nm == "none" ? NormalizeMode::kNone : NormalizeMode::kAccumulatedMean;
  const std::string ld = c.get("sampler_logdet", "diag");
  if (ld != "full" && ld != "diag") bad_value("sampler_logdet", ld, "full|diag");
  s.logdet_mode = ld == "full" ? LogDetMode::kFull : LogDetMode::kDiagonal;
  s.max_clamp_rate = c.get_double("max_clamp_rate", s.max_clamp_rate);
  if (c.has("fd_step")) s.fd_step = c.get_double("fd_step", 1e-4);
  s.validate();
  return s;
}

Activation activation_from(const Config& c) {
  const std::string a = c.get("activation", "split_tanh");
  if (a == "split_tanh") return Activation::kSplitTanh;
  if (a == "identity") return Activation::kIdentity;
  bad_value("activation", a, "split_tanh|identity");
}

CVaeDims model_dims_from(const Config& c, Eigen::Index data_dim) {
  CVaeDims d;
  d.data_dim = data_dim;
  d.latent_dim = c.get_int("latent_dim", 8);
  d.hidden = c.get_int("hidden", 64);
  if (d.latent_dim < 1 || d.hidden < 1) throw Error(ErrorCode::kInvalidArgument, "latent_dim and hidden must be >= 1");
  return d;
}

}  // namespace kvae
