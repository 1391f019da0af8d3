#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kvae/linalg.hpp"

namespace kvae {

// Items are stored column-wise, pixels in [0, 1], flattened as
// (channel, row, col) for multi-channel data.
struct Dataset {
  RMatrix items;
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<int> labels;
  std::string provenance;

  std::size_t size() const { return static_cast<std::size_t>(items.cols()); }
  Eigen::Index dim() const { return items.rows(); }
};

Dataset parse_idx(const std::vector<std::uint8_t>& bytes);
std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_idx(const Dataset& ds);
std::vector<std::uint8_t> serialize_idx_labels(const std::vector<int>& labels);

Dataset parse_cifar10_batch(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_cifar10_batch(const Dataset& ds);

struct ClusterSpec {
  int clusters = 2;
  int dim = 2;
  double separation = 0.2;  // distance between cluster centres
  double noise = 0.02;      // per-coordinate standard deviation
  int per_cluster = 100;
  std::uint64_t seed = 0;
};

Dataset synthetic_clusters(const ClusterSpec& spec);

// Seeded subset (original order preserved) followed by a box-filter
// downsample to target_h x target_w. Target sizes must divide the source.
Dataset subset_and_downsample(const Dataset& ds, std::size_t count, int target_h, int target_w,
                              std::uint64_t seed);
std::vector<std::size_t> subset_indices(std::size_t total, std::size_t count, std::uint64_t seed);
Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices, const std::string& tag);

// Disjoint seeded train/eval subsets.
std::pair<Dataset, Dataset> split_train_eval(const Dataset& ds, std::size_t train, std::size_t eval,
                                             std::uint64_t seed);

// Cache layout under the data root:
//   mnist/train-images-idx3-ubyte, mnist/train-labels-idx1-ubyte
//   cifar-10-batches-bin/data_batch_{1..5}.bin
std::string data_root();  // $KVAE_DATA_ROOT, else "data"
Dataset load_mnist(const std::string& dir);
Dataset load_cifar10(const std::string& dir, int batches = 1);

}  // namespace kvae
