#pragma once

#include <string_view>

#include "kvae/linalg.hpp"

namespace kvae {

enum class MetricProvenance { kExactFisher, kDisplayedFisher, kKlHessian, kMonteCarlo, kMixture, kProxy, kDiagonal };

std::string_view provenance_name(MetricProvenance p);

// h = g - i*omega at a latent point.
struct HermitianMetric {
  HermitianMatrix matrix;
  MetricProvenance provenance = MetricProvenance::kMixture;
  CVector at;

  RMatrix riemannian() const { return matrix.real_part(); }
  RMatrix kahler_form() const { return -matrix.imag_part(); }
  HermitianMetric diagonal_part() const;
};

}  // namespace kvae
