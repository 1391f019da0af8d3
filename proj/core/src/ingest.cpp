#include "kvae/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <numeric>

#include "kvae/bytes.hpp"
#include "kvae/error.hpp"
#include "kvae/rng.hpp"

namespace kvae {

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  if (off + 4 > b.size()) {
    throw Error(ErrorCode::kTruncatedFile, "header ends at byte offset " + std::to_string(b.size()) +
                                               ", need " + std::to_string(off + 4));
  }
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void write_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void check_magic(std::uint32_t got, std::uint32_t want) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "magic 0x%08x, expected 0x%08x", got, want);
    throw Error(ErrorCode::kBadMagic, buf);
  }
}

void check_payload(const std::vector<std::uint8_t>& b, std::size_t off, std::size_t len) {
  if (off + len > b.size()) {
    throw Error(ErrorCode::kTruncatedFile, "payload ends at byte offset " + std::to_string(b.size()) +
                                               ", need " + std::to_string(off + len));
  }
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}

}  // namespace

Dataset parse_idx(const std::vector<std::uint8_t>& bytes) {
  check_magic(read_be32(bytes, 0), kIdxImages);
  const std::size_t count = read_be32(bytes, 4);
  const std::size_t rows = read_be32(bytes, 8);
  const std::size_t cols = read_be32(bytes, 12);
  const std::size_t px = rows * cols;
  check_payload(bytes, 16, count * px);
  Dataset ds;
  ds.height = static_cast<int>(rows);
  ds.width = static_cast<int>(cols);
  ds.channels = 1;
  ds.items.resize(static_cast<Eigen::Index>(px), static_cast<Eigen::Index>(count));
  const std::uint8_t* p = bytes.data() + 16;
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t k = 0; k < px; ++k) ds.items(k, i) = p[i * px + k] / 255.0;
  ds.provenance = "idx";
  return ds;
}

std::vector<int> parse_idx_labels(const std::vector<std::uint8_t>& bytes) {
  check_magic(read_be32(bytes, 0), kIdxLabels);
  const std::size_t count = read_be32(bytes, 4);
  check_payload(bytes, 8, count);
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count));
}

std::vector<std::uint8_t> serialize_idx(const Dataset& ds) {
  std::vector<std::uint8_t> b;
  write_be32(b, kIdxImages);
  write_be32(b, static_cast<std::uint32_t>(ds.size()));
  write_be32(b, static_cast<std::uint32_t>(ds.height));
  write_be32(b, static_cast<std::uint32_t>(ds.width));
  for (Eigen::Index i = 0; i < ds.items.cols(); ++i)
    for (Eigen::Index k = 0; k < ds.items.rows(); ++k) b.push_back(to_byte(ds.items(k, i)));
  return b;
}

std::vector<std::uint8_t> serialize_idx_labels(const std::vector<int>& labels) {
  std::vector<std::uint8_t> b;
  write_be32(b, kIdxLabels);
  write_be32(b, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) b.push_back(static_cast<std::uint8_t>(l));
  return b;
}

Dataset parse_cifar10_batch(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % kCifarRecord != 0) {
    throw Error(ErrorCode::kBadRecordLength, std::to_string(bytes.size()) + " bytes is not a multiple of " +
                                                 std::to_string(kCifarRecord));
  }
  const std::size_t count = bytes.size() / kCifarRecord;
  Dataset ds;
  ds.height = 32;
  ds.width = 32;
  ds.channels = 3;
  ds.items.resize(3072, static_cast<Eigen::Index>(count));
  ds.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kCifarRecord;
    ds.labels[i] = rec[0];
    for (std::size_t k = 0; k < 3072; ++k) ds.items(k, i) = rec[1 + k] / 255.0;
  }
  ds.provenance = "cifar10";
  return ds;
}

std::vector<std::uint8_t> serialize_cifar10_batch(const Dataset& ds) {
  if (ds.dim() != 3072 || ds.labels.size() != ds.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "CIFAR-10 records need 3072 pixels and a label");
  }
  std::vector<std::uint8_t> b;
  b.reserve(ds.size() * kCifarRecord);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    b.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (Eigen::Index k = 0; k < 3072; ++k) b.push_back(to_byte(ds.items(k, static_cast<Eigen::Index>(i))));
  }
  return b;
}

Dataset synthetic_clusters(const ClusterSpec& spec) {
  if (spec.clusters < 1 || spec.dim < 1 || spec.per_cluster < 1 || spec.clusters > 2 * spec.dim) {
    throw Error(ErrorCode::kInvalidArgument, "invalid cluster spec");
  }
  // Centres 0.5 +- (sep / sqrt 2) e_k are pairwise sep apart.
  const double r = spec.separation / std::sqrt(2.0);
  std::vector<RVector> centres;
  for (int k = 0; k < spec.clusters; ++k) {
    RVector c = RVector::Constant(spec.dim, 0.5);
    if (spec.clusters > 1) c(k % spec.dim) += (k < spec.dim ? r : -r);
    centres.push_back(c);
  }
  Rng rng(spec.seed);
  std::normal_distribution<double> nd(0.0, spec.noise);
  const int total = spec.clusters * spec.per_cluster;
  Dataset ds;
  ds.height = 1;
  ds.width = spec.dim;
  ds.items.resize(spec.dim, total);
  ds.labels.resize(total);
  for (int i = 0; i < total; ++i) {
    const int k = i % spec.clusters;
    for (int j = 0; j < spec.dim; ++j) ds.items(j, i) = std::clamp(centres[k](j) + nd(rng), 0.0, 1.0);
    ds.labels[i] = k;
  }
  ds.provenance = "synthetic(k=" + std::to_string(spec.clusters) + ",dim=" + std::to_string(spec.dim) +
                  ",seed=" + std::to_string(spec.seed) + ")";
  return ds;
}

std::vector<std::size_t> subset_indices(std::size_t total, std::size_t count, std::uint64_t seed) {
  if (count > total) {
    throw Error(ErrorCode::kCountTooLarge, std::to_string(count) + " > " + std::to_string(total));
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Fisher-Yates with an explicit draw so the order is library-independent.
  for (std::size_t i = total; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Dataset select(const Dataset& ds, const std::vector<std::size_t>& indices, const std::string& tag) {
  Dataset out;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.items.resize(ds.dim(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t j = 0; j < indices.size(); ++j) {
    out.items.col(static_cast<Eigen::Index>(j)) = ds.items.col(static_cast<Eigen::Index>(indices[j]));
    if (!ds.labels.empty()) out.labels.push_back(ds.labels[indices[j]]);
  }
  out.provenance = ds.provenance + "+" + tag;
  return out;
}

Dataset subset_and_downsample(const Dataset& ds, std::size_t count, int target_h, int target_w,
                              std::uint64_t seed) {
  const auto idx = subset_indices(ds.size(), count, seed);
  Dataset sub = select(ds, idx, "subset(" + std::to_string(count) + ",seed=" + std::to_string(seed) + ")");
  if (target_h == ds.height && target_w == ds.width) return sub;
  if (target_h <= 0 || target_w <= 0 || ds.height % target_h != 0 || ds.width % target_w != 0) {
    throw Error(ErrorCode::kInvalidArgument, "target shape must divide the source shape");
  }
  const int fh = ds.height / target_h;
  const int fw = ds.width / target_w;
  const double inv = 1.0 / (fh * fw);
  Dataset out;
  out.height = target_h;
  out.width = target_w;
  out.channels = ds.channels;
  out.labels = sub.labels;
  out.items.resize(static_cast<Eigen::Index>(target_h) * target_w * ds.channels, sub.items.cols());
  for (Eigen::Index i = 0; i < sub.items.cols(); ++i) {
    for (int c = 0; c < ds.channels; ++c) {
      for (int r = 0; r < target_h; ++r) {
        for (int q = 0; q < target_w; ++q) {
          double acc = 0.0;
          for (int a = 0; a < fh; ++a)
            for (int b = 0; b < fw; ++b)
              acc += sub.items((c * ds.height + r * fh + a) * ds.width + q * fw + b, i);
          out.items((c * target_h + r) * target_w + q, i) = acc * inv;
        }
      }
    }
  }
  out.provenance = sub.provenance + "+box(" + std::to_string(target_h) + "x" + std::to_string(target_w) + ")";
  return out;
}

std::pair<Dataset, Dataset> split_train_eval(const Dataset& ds, std::size_t train, std::size_t eval,
                                             std::uint64_t seed) {
  if (train + eval > ds.size()) {
    throw Error(ErrorCode::kCountTooLarge, std::to_string(train + eval) + " > " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  std::vector<std::size_t> a(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train));
  std::vector<std::size_t> b(idx.begin() + static_cast<std::ptrdiff_t>(train),
                             idx.begin() + static_cast<std::ptrdiff_t>(train + eval));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {select(ds, a, "train(" + std::to_string(train) + ")"), select(ds, b, "eval(" + std::to_string(eval) + ")")};
}

std::string data_root() {
  const char* env = std::getenv("KVAE_DATA_ROOT");
  return env && *env ? std::string(env) : std::string("data");
}

Dataset load_mnist(const std::string& dir) {
  const std::filesystem::path base(dir);
  Dataset ds = parse_idx(read_file_bytes((base / "train-images-idx3-ubyte").string()));
  const auto label_path = base / "train-labels-idx1-ubyte";
  if (std::filesystem::exists(label_path)) {
    ds.labels = parse_idx_labels(read_file_bytes(label_path.string()));
    if (ds.labels.size() != ds.size()) throw Error(ErrorCode::kDimensionMismatch, "label count mismatch");
  }
  ds.provenance = "mnist:" + dir;
  return ds;
}

Dataset load_cifar10(const std::string& dir, int batches) {
  Dataset all;
  std::vector<RMatrix> parts;
  for (int b = 1; b <= batches; ++b) {
    const auto path = std::filesystem::path(dir) / ("data_batch_" + std::to_string(b) + ".bin");
    Dataset part = parse_cifar10_batch(read_file_bytes(path.string()));
    all.height = part.height;
    all.width = part.width;
    all.channels = part.channels;
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    parts.push_back(std::move(part.items));
  }
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.cols();
  all.items.resize(3072, total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    all.items.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  all.provenance = "cifar10:" + dir;
  return all;
}

}  // namespace kvae
