#pragma once

// Differentiable tensor operations. Every op validates shapes and throws
// ConfigError with the offending shapes on mismatch.

#include <cstddef>
#include <span>
#include <vector>

#include "restr/tensor.hpp"

namespace restr::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise a + b. `b` may equal a's shape or match it with a trailing
// singleton axis (broadcast along the last axis of a).
Tensor add(const Tensor& a, const Tensor& b);
// Elementwise a * b with the same broadcasting rule as add().
Tensor hadamard(const Tensor& a, const Tensor& b);
// x[..., D] + bias[D] broadcast over all leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);

// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis, then applies gain/bias of that length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Elements [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
// Swaps the two axes of a rank-2 tensor.
Tensor transpose(const Tensor& x);

// [h x w x c] -> [2h x 2w x c], each cell replicated into a 2x2 block.
Tensor upsample2x(const Tensor& grid);
// [h x w x c] -> [2h x 2w x c], bilinear with half-pixel centers and edge
// clamping (the align_corners=false convention).
Tensor upsample2x_bilinear(const Tensor& grid);

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy of probabilities against {0,1} targets, with
// probabilities clamped to [1e-7, 1 - 1e-7]. Clamped entries still pass the
// gradient evaluated at the clamp bound so saturated errors keep a signal.
Tensor bce(const Tensor& prob, const Tensor& target);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Rows of `table` [V x D] selected by ids -> [ids.size() x D].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// y = x . W + b
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_bias(matmul(x, weight), bias);
}

}  // namespace restr::ops
