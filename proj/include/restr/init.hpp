#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "restr/tensor.hpp"

namespace restr {

using Rng = std::mt19937_64;

// Normal(0, std) resampled until within two standard deviations.
Tensor trunc_normal(Shape shape, double std, Rng& rng);

// Called once per trainable tensor with a stable dotted name and whether
// decoupled weight decay applies to it.
using ParamVisitor = std::function<void(const std::string& name, Tensor& param, bool decay)>;

// SplitMix64 finalizer over a combination of two values; used to derive
// independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace restr
