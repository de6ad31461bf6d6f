#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "restr/config.hpp"
#include "restr/grad_check.hpp"

namespace restr {

struct OpCheckResult {
  std::string op;
  std::string shape;  // shape of the first input
  std::uint64_t seed = 0;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Finite-difference check of every differentiable op (plus attention and a
// full transformer block) over `cases` seeds, each with its own shapes.
std::vector<OpCheckResult> run_op_checks(std::size_t cases = 5, const GradCheckOptions& base = {});

// The small configuration used for the end-to-end check:
// 16x16 input, P=4, D=16, 2 heads, one layer per encoder, 2 fusion layers.
ModelConfig gradcheck_model_config();

// Checks `samples` randomly chosen parameters of the full forward + loss on
// one random sample. Default tolerance 1e-3.
GradCheckReport run_model_check(const ModelConfig& cfg, std::size_t samples = 50, std::uint64_t seed = 0,
                                double tol = 1e-3);

}  // namespace restr
