#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "kvae/cvae.hpp"
#include "kvae/sampler.hpp"

namespace kvae {

// Flat key = value configuration. Lines starting with '#' are comments.
class Config {
 public:
  static Config parse(std::string_view text);  // InvalidArgument on malformed lines or unknown keys
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  void apply_override(std::string_view assignment);  // "key=value"

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_list(const std::string& key, const std::vector<double>& fallback) const;

  // Sorted "key = value" lines; the basis of hash().
  std::string canonical() const;
  // First 12 hex digits of SHA-1 over canonical().
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

const std::vector<std::string>& known_config_keys();

std::string sha1_hex(std::string_view data);
// Same digest git assigns to a blob with this content.
std::string git_blob_hash(std::string_view content);

TrainConfig train_config_from(const Config& c);
SamplerConfig sampler_config_from(const Config& c);
CVaeDims model_dims_from(const Config& c, Eigen::Index data_dim);
Activation activation_from(const Config& c);

}  // namespace kvae
