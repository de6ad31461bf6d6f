#include "restr/tensor.hpp"

#include <array>
#include <sstream>

#include "restr/error.hpp"

namespace restr {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::kMatMul: return "matmul";
    case OpTag::kAdd: return "add";
    case OpTag::kAddBias: return "add_bias";
    case OpTag::kHadamard: return "hadamard";
    case OpTag::kScale: return "scale";
    case OpTag::kGelu: return "gelu";
    case OpTag::kRelu: return "relu";
    case OpTag::kSigmoid: return "sigmoid";
    case OpTag::kSoftmax: return "softmax";
    case OpTag::kLayerNorm: return "layer_norm";
    case OpTag::kConcat: return "concat";
    case OpTag::kSlice: return "slice";
    case OpTag::kReshape: return "reshape";
    case OpTag::kTranspose: return "transpose";
    case OpTag::kUpsampleNearest: return "upsample2x";
    case OpTag::kUpsampleBilinear: return "upsample2x_bilinear";
    case OpTag::kBce: return "bce";
    case OpTag::kSum: return "sum";
    case OpTag::kMean: return "mean";
    case OpTag::kEmbedding: return "embedding";
  }
  return "unknown";
}

Tensor::Tensor(Shape shape) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ConfigError("tensor shape " + shape_str(shape) + " has a zero extent");
  }
  impl_->values.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  if (values.size() != shape_numel(shape)) {
    throw ConfigError("tensor shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                      " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->values.begin(), t.impl_->values.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

double Tensor::item() const {
  if (numel() != 1) throw ConfigError("item() on tensor of shape " + shape_str(shape()));
  return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values); }

std::size_t Tensor::offset(std::size_t i, std::size_t j) const {
  const auto& s = impl_->shape;
  return i * s[1] + j;
}

std::size_t Tensor::offset(std::size_t i, std::size_t j, std::size_t k) const {
  const auto& s = impl_->shape;
  return (i * s[1] + j) * s[2] + k;
}

// ---------------------------------------------------------------------------

namespace {

struct Node {
  OpTag tag;
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::shared_ptr<detail::TensorImpl> output;
  detail::BackwardFn fn;
};

struct Tape {
  std::vector<Node> nodes;
  std::uint64_t generation = 1;

  void reset() {
    nodes.clear();
    ++generation;
  }
};

Tape& tape() {
  thread_local Tape t;
  return t;
}

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_macs = 0;

constexpr std::size_t kNumTags = static_cast<std::size_t>(OpTag::kEmbedding) + 1;
std::array<double, kNumTags> g_fault_scale = [] {
  std::array<double, kNumTags> a{};
  a.fill(1.0);
  return a;
}();

}  // namespace

std::vector<GraphNodeInfo> graph_snapshot() {
  std::vector<GraphNodeInfo> out;
  for (const auto& n : tape().nodes) {
    GraphNodeInfo info{n.tag, {}};
    for (const auto& in : n.inputs) info.inputs.push_back(in->generation == tape().generation ? in->node_id : -1);
    out.push_back(std::move(info));
  }
  return out;
}

std::size_t graph_size() { return tape().nodes.size(); }

void clear_graph() { tape().reset(); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void detail::record(OpTag tag, const std::vector<const Tensor*>& inputs, Tensor& out, BackwardFn fn) {
  if (!g_grad_enabled) return;
  bool needs = false;
  for (const auto* t : inputs) needs = needs || t->requires_grad();
  if (!needs) return;
  Tape& tp = tape();
  Node node{tag, {}, out.shared_impl(), std::move(fn)};
  node.inputs.reserve(inputs.size());
  for (const auto* t : inputs) node.inputs.push_back(t->shared_impl());
  auto* impl = out.impl();
  impl->requires_grad = true;
  impl->node_id = static_cast<std::int64_t>(tp.nodes.size());
  impl->generation = tp.generation;
  tp.nodes.push_back(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ConfigError("backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  auto* impl = loss.impl();
  if (impl->node_id < 0) {
    if (!impl->requires_grad) throw RuntimeError("backward() on a tensor that does not require grad");
    impl->ensure_grad()[0] += 1.0;
    return;
  }
  Tape& tp = tape();
  if (impl->generation != tp.generation || static_cast<std::size_t>(impl->node_id) >= tp.nodes.size() ||
      tp.nodes[impl->node_id].output.get() != impl) {
    throw RuntimeError("backward() called twice or on a graph that was already consumed");
  }
  impl->ensure_grad()[0] += 1.0;
  for (std::int64_t i = impl->node_id; i >= 0; --i) {
    Node& node = tp.nodes[static_cast<std::size_t>(i)];
    auto& g = node.output->grad;
    if (g.empty()) continue;
    const double fault = g_fault_scale[static_cast<std::size_t>(node.tag)];
    if (fault != 1.0) {
      std::vector<double> scaled(g);
      for (auto& x : scaled) x *= fault;
      node.fn(scaled);
    } else {
      node.fn(g);
    }
  }
  tp.reset();
}

void set_adjoint_fault(OpTag tag, double scale) { g_fault_scale[static_cast<std::size_t>(tag)] = scale; }

void clear_adjoint_faults() { g_fault_scale.fill(1.0); }

std::uint64_t mac_count() { return g_macs; }
void reset_mac_count() { g_macs = 0; }

namespace detail {
void add_macs(std::uint64_t n) { g_macs += n; }
}  // namespace detail

}  // namespace restr
