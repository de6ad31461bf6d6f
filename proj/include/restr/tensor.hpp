#pragma once

// Dense row-major tensors of doubles with a dynamically recorded tape for
// reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, the way
// framework tensors do. Ops record a node on the calling thread's tape when
// at least one input requires a gradient and grad mode is enabled.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace restr {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

enum class OpTag {
  kMatMul,
  kAdd,
  kAddBias,
  kHadamard,
  kScale,
  kGelu,
  kRelu,
  kSigmoid,
  kSoftmax,
  kLayerNorm,
  kConcat,
  kSlice,
  kReshape,
  kTranspose,
  kUpsampleNearest,
  kUpsampleBilinear,
  kBce,
  kSum,
  kMean,
  kEmbedding,
};

const char* op_name(OpTag tag);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  std::int64_t node_id = -1;  // index on the tape that produced it, -1 for leaves
  std::uint64_t generation = 0;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->values.size(); }

  std::span<double> values() { return impl_->values; }
  std::span<const double> values() const { return impl_->values; }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }

  // Row-major element access for rank-1/2/3 tensors.
  double& at(std::size_t i) { return impl_->values.at(i); }
  double at(std::size_t i) const { return impl_->values.at(i); }
  double& at(std::size_t i, std::size_t j) { return impl_->values[offset(i, j)]; }
  double at(std::size_t i, std::size_t j) const { return impl_->values[offset(i, j)]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) { return impl_->values[offset(i, j, k)]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return impl_->values[offset(i, j, k)]; }

  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return impl_->node_id < 0; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<double> grad() { return impl_->ensure_grad(); }
  std::span<const double> grad() const { return impl_->ensure_grad(); }
  void zero_grad() { impl_->grad.clear(); }

  // Copy of the values with no history.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& shared_impl() const { return impl_; }

 private:
  std::size_t offset(std::size_t i, std::size_t j) const;
  std::size_t offset(std::size_t i, std::size_t j, std::size_t k) const;

  std::shared_ptr<detail::TensorImpl> impl_;
};

// ---------------------------------------------------------------------------
// Tape

struct GraphNodeInfo {
  OpTag tag;
  std::vector<std::int64_t> inputs;  // producing node ids, -1 for leaves
};

// Nodes recorded on this thread since the last backward()/clear_graph().
std::vector<GraphNodeInfo> graph_snapshot();
std::size_t graph_size();
void clear_graph();

// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse append order,
// accumulating into every tensor that requires a gradient. The tape is
// consumed; a second call on the same loss throws RuntimeError.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

using BackwardFn = std::function<void(const std::vector<double>& out_grad)>;

// Registers `out` as the result of `tag` applied to `inputs` when any input
// requires a gradient; `fn` receives d(loss)/d(out) and must accumulate
// into the inputs' grads.
void record(OpTag tag, const std::vector<const Tensor*>& inputs, Tensor& out, BackwardFn fn);

}  // namespace detail

// Test hook: multiplies the adjoint flowing into every node of `tag` by
// `scale` during backward(). scale = 1 disables.
void set_adjoint_fault(OpTag tag, double scale);
void clear_adjoint_faults();

// Multiply-accumulate counter incremented by every matmul executed on this
// thread (forward only).
std::uint64_t mac_count();
void reset_mac_count();

}  // namespace restr
