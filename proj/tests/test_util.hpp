#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "restr/init.hpp"
#include "restr/tensor.hpp"

namespace restr::testing {

inline Tensor randn(Shape shape, std::uint64_t seed, double std = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, std);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace restr::testing
