#pragma once

#include <cstdint>
#include <random>

#include "kvae/linalg.hpp"

namespace kvae {

using Rng = std::mt19937_64;

// Derives an independent stream seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline RVector standard_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd;
  RVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

// Circular standard complex normal: E|e|^2 = 1, E[e^2] = 0.
inline CVector standard_complex_normal(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd(0.0, std::sqrt(0.5));
  CVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = nd(rng);
    v(i) = cdouble(re, nd(rng));
  }
  return v;
}

}  // namespace kvae
