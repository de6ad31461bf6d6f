#include "restr/transformer.hpp"

#include <cmath>

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

void TransformerConfig::validate() const {
  if (layers == 0) throw ConfigError("transformer: layers must be >= 1");
  if (dim == 0 || heads == 0) throw ConfigError("transformer: dim and heads must be positive");
  if (dim % heads != 0) {
    throw ConfigError("transformer: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
}

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Tensor::full({dim}, 1.0).set_requires_grad(true), Tensor::zeros({dim}).set_requires_grad(true)};
}

void LayerNormParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gain", gain, false);
  fn(prefix + ".bias", bias, false);
}

BlockParams BlockParams::init(const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.dim, h = cfg.hidden();
  auto weight = [&](std::size_t in, std::size_t out) { return trunc_normal({in, out}, 0.02, rng).set_requires_grad(true); };
  auto zeros = [](std::size_t n) { return Tensor::zeros({n}).set_requires_grad(true); };
  BlockParams p;
  p.norm1 = LayerNormParams::init(d);
  p.wq = weight(d, d);
  p.bq = zeros(d);
  p.wk = weight(d, d);
  p.bk = zeros(d);
  p.wv = weight(d, d);
  p.bv = zeros(d);
  p.w_out = weight(d, d);
  p.b_out = zeros(d);
  p.norm2 = LayerNormParams::init(d);
  p.w_fc1 = weight(d, h);
  p.b_fc1 = zeros(h);
  p.w_fc2 = weight(h, d);
  p.b_fc2 = zeros(d);
  return p;
}

HeadParams BlockParams::head(std::size_t h, std::size_t head_dim) const {
  const std::size_t b = h * head_dim, e = b + head_dim;
  return {ops::slice(wq, 1, b, e), ops::slice(bq, 0, b, e), ops::slice(wk, 1, b, e),
          ops::slice(bk, 0, b, e), ops::slice(wv, 1, b, e), ops::slice(bv, 0, b, e)};
}

void BlockParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm1.visit(prefix + ".norm1", fn);
  fn(prefix + ".attn.wq", wq, true);
  fn(prefix + ".attn.bq", bq, false);
  fn(prefix + ".attn.wk", wk, true);
  fn(prefix + ".attn.bk", bk, false);
  fn(prefix + ".attn.wv", wv, true);
  fn(prefix + ".attn.bv", bv, false);
  fn(prefix + ".attn.w_out", w_out, true);
  fn(prefix + ".attn.b_out", b_out, false);
  norm2.visit(prefix + ".norm2", fn);
  fn(prefix + ".mlp.w_fc1", w_fc1, true);
  fn(prefix + ".mlp.b_fc1", b_fc1, false);
  fn(prefix + ".mlp.w_fc2", w_fc2, true);
  fn(prefix + ".mlp.b_fc2", b_fc2, false);
}

EncoderParams EncoderParams::init(const TransformerConfig& cfg, Rng& rng) {
  cfg.validate();
  EncoderParams p;
  const std::size_t count = cfg.shared ? 1 : cfg.layers;
  for (std::size_t i = 0; i < count; ++i) p.blocks.push_back(BlockParams::init(cfg, rng));
  p.final_norm = LayerNormParams::init(cfg.dim);
  return p;
}

void EncoderParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
  final_norm.visit(prefix + ".final_norm", fn);
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* attention) {
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt);
  Tensor a = ops::softmax(scores, 1);
  if (attention != nullptr) *attention = a.detach();
  return ops::matmul(a, v);
}

Tensor self_attention(const Tensor& z, const HeadParams& head, Tensor* attention) {
  if (z.rank() != 2 || head.wq.rank() != 2 || z.dim(1) != head.wq.dim(0)) {
    throw ConfigError("self_attention: input " + shape_str(z.shape()) + " does not match head projection " +
                      shape_str(head.wq.shape()));
  }
  return attend(ops::linear(z, head.wq, head.bq), ops::linear(z, head.wk, head.bk), ops::linear(z, head.wv, head.bv),
                attention);
}

Tensor msa(const Tensor& z, const BlockParams& params, std::size_t heads, std::vector<Tensor>* attention) {
  if (z.rank() != 2 || z.dim(1) != params.wq.dim(0)) {
    throw ConfigError("msa: input " + shape_str(z.shape()) + " does not match projection " +
                      shape_str(params.wq.shape()));
  }
  const std::size_t d = params.wq.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("msa: " + std::to_string(heads) + " heads do not divide width " + std::to_string(d));
  }
  const std::size_t dh = d / heads;
  Tensor q = ops::linear(z, params.wq, params.bq);
  Tensor k = ops::linear(z, params.wk, params.bk);
  Tensor v = ops::linear(z, params.wv, params.bv);
  std::vector<Tensor> outs;
  outs.reserve(heads);
  if (attention != nullptr) attention->assign(heads, Tensor());
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    outs.push_back(attend(ops::slice(q, 1, b, e), ops::slice(k, 1, b, e), ops::slice(v, 1, b, e),
                          attention != nullptr ? &(*attention)[h] : nullptr));
  }
  Tensor merged = heads == 1 ? outs[0] : ops::concat(outs, 1);
  return ops::linear(merged, params.w_out, params.b_out);
}

Tensor transformer_block(const Tensor& z, const BlockParams& params, const TransformerConfig& cfg,
                         std::vector<Tensor>* attention) {
  Tensor mid = ops::add(msa(ops::layer_norm(z, params.norm1.gain, params.norm1.bias, kLayerNormEps), params, cfg.heads,
                            attention),
                        z);
  Tensor hidden =
      ops::gelu(ops::linear(ops::layer_norm(mid, params.norm2.gain, params.norm2.bias, kLayerNormEps), params.w_fc1,
                            params.b_fc1));
  return ops::add(ops::linear(hidden, params.w_fc2, params.b_fc2), mid);
}

Tensor encoder_stack(const Tensor& z, const TransformerConfig& cfg, const EncoderParams& params, AttentionTrace* trace) {
  const std::size_t expected = cfg.shared ? 1 : cfg.layers;
  if (params.blocks.size() != expected) {
    throw ConfigError("encoder_stack: expected " + std::to_string(expected) + " blocks, got " +
                      std::to_string(params.blocks.size()));
  }
  if (trace != nullptr) trace->layers.assign(cfg.layers, {});
  Tensor x = z;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const BlockParams& block = params.blocks[cfg.shared ? 0 : i];
    x = transformer_block(x, block, cfg, trace != nullptr ? &trace->layers[i] : nullptr);
  }
  return ops::layer_norm(x, params.final_norm.gain, params.final_norm.bias, kLayerNormEps);
}

std::size_t layer_norm_param_count(std::size_t dim) { return 2 * dim; }

std::size_t block_param_count(const TransformerConfig& cfg) {
  const std::size_t d = cfg.dim, h = cfg.hidden();
  const std::size_t attention = 4 * (d * d + d);
  const std::size_t mlp = d * h + h + h * d + d;
  return 2 * layer_norm_param_count(d) + attention + mlp;
}

std::size_t encoder_block_param_count(const TransformerConfig& cfg) {
  return (cfg.shared ? 1 : cfg.layers) * block_param_count(cfg);
}

std::size_t encoder_param_count(const TransformerConfig& cfg) {
  return encoder_block_param_count(cfg) + layer_norm_param_count(cfg.dim);
}

std::uint64_t encoder_macs(const TransformerConfig& cfg, std::size_t tokens) {
  const std::uint64_t n = tokens, d = cfg.dim, h = cfg.hidden();
  const std::uint64_t projections = 4 * n * d * d;
  const std::uint64_t attention = 2 * n * n * d;  // q k^T and A v summed over heads
  const std::uint64_t mlp = 2 * n * d * h;
  return cfg.layers * (projections + attention + mlp);
}

}  // namespace restr
