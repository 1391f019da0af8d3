#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kvae/bytes.hpp"
#include "kvae/error.hpp"
#include "kvae/kahler.hpp"

namespace kvae {

namespace {
constexpr char kAtlasMagic[4] = {'K', 'A', 'T', 'L'};
constexpr std::uint32_t kAtlasVersion = 1;
}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << text;
}

// Layout: "KATL", u32 version, u64 N, u64 d, u64 n, f64 rho, i32 sign,
// then per component: f64 a_i, n x (f64 re, f64 im) mean, n x f64 variance.
std::vector<std::uint8_t> serialize_atlas(const LatentAtlas& atlas) {
  ByteWriter w;
  w.bytes(kAtlasMagic, 4);
  w.u32(kAtlasVersion);
  w.u64(static_cast<std::uint64_t>(atlas.size()));
  w.u64(static_cast<std::uint64_t>(atlas.latent_dim()));
  w.u64(static_cast<std::uint64_t>(atlas.data_dim()));
  w.f64(atlas.rho());
  w.i32(atlas.sign() == ExponentSign::kNegative ? -1 : 1);
  for (Eigen::Index i = 0; i < atlas.size(); ++i) {
    w.f64(atlas.component_weights()(i));
    for (Eigen::Index k = 0; k < atlas.data_dim(); ++k) {
      w.f64(atlas.means()(k, i).real());
      w.f64(atlas.means()(k, i).imag());
    }
    for (Eigen::Index k = 0; k < atlas.data_dim(); ++k) w.f64(atlas.variances()(k, i));
  }
  return w.take();
}

LatentAtlas deserialize_atlas(const std::vector<std::uint8_t>& bytes, ComplexMap decoder) {
  ByteReader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kAtlasMagic)) throw Error(ErrorCode::kBadMagic, "not a KATL record");
  const std::uint32_t version = r.u32();
  if (version != kAtlasVersion) {
    throw Error(ErrorCode::kBadMagic, "unsupported KATL version " + std::to_string(version));
  }
  const std::uint64_t N = r.u64();
  const std::uint64_t d = r.u64();
  const std::uint64_t n = r.u64();
  const double rho = r.f64();
  const std::int32_t sign = r.i32();
  const std::uint64_t per = 8 + 24 * n;
  if (N > (bytes.size() / std::max<std::uint64_t>(per, 1)) + 1) {
    throw Error(ErrorCode::kTruncatedFile, "component count exceeds file size");
  }
  std::vector<AtlasComponent> comps(N);
  for (auto& c : comps) {
    c.weight = r.f64();
    c.mean.resize(static_cast<Eigen::Index>(n));
    c.variance.resize(static_cast<Eigen::Index>(n));
    for (std::uint64_t k = 0; k < n; ++k) {
      const double re = r.f64();
      c.mean(k) = cdouble(re, r.f64());
    }
    for (std::uint64_t k = 0; k < n; ++k) c.variance(k) = r.f64();
  }
  return LatentAtlas(std::move(comps), rho, std::move(decoder), static_cast<Eigen::Index>(d),
                     sign < 0 ? ExponentSign::kNegative : ExponentSign::kPositive);
}

void save_atlas(const LatentAtlas& atlas, const std::string& path) {
  write_file_bytes(path, serialize_atlas(atlas));
}

LatentAtlas load_atlas(const std::string& path, ComplexMap decoder) {
  return deserialize_atlas(read_file_bytes(path), std::move(decoder));
}

std::string atlas_to_text(const LatentAtlas& atlas) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "KATL text v" << kAtlasVersion << "\n";
  os << "N " << atlas.size() << "\nd " << atlas.latent_dim() << "\nn " << atlas.data_dim() << "\n";
  os << "rho " << atlas.rho() << "\nsign " << (atlas.sign() == ExponentSign::kNegative ? -1 : 1) << "\n";
  for (Eigen::Index i = 0; i < atlas.size(); ++i) {
    os << "component " << i << " weight " << atlas.component_weights()(i) << "\n";
    os << "mean";
    for (Eigen::Index k = 0; k < atlas.data_dim(); ++k)
      os << ' ' << atlas.means()(k, i).real() << ' ' << atlas.means()(k, i).imag();
    os << "\nvariance";
    for (Eigen::Index k = 0; k < atlas.data_dim(); ++k) os << ' ' << atlas.variances()(k, i);
    os << "\n";
  }
  return os.str();
}

}  // namespace kvae
