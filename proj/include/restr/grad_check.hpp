#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "restr/tensor.hpp"

namespace restr {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, so entries whose true gradient
  // is zero are judged on absolute error instead.
  double floor = 1e-6;
  // 0 checks every element of every input; otherwise this many elements are
  // drawn without replacement from all inputs combined.
  std::size_t max_samples = 0;
  std::uint64_t seed = 0x5eed;
};

struct GradCheckEntry {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of f against central differences.
// Non-scalar outputs are contracted with a fixed random tensor (seeded by
// options.seed) so every output element contributes.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

}  // namespace restr
