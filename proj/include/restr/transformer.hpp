#pragma once

// Pre-norm transformer encoder: blocks of
//   z' = MSA(LN(z)) + z,   out = MLP(LN(z')) + z'
// stacked and followed by one terminal layer norm.

#include <cstddef>
#include <string>
#include <vector>

#include "restr/init.hpp"
#include "restr/tensor.hpp"

namespace restr {

inline constexpr double kLayerNormEps = 1e-6;

struct TransformerConfig {
  std::size_t layers = 1;
  std::size_t dim = 0;
  std::size_t heads = 1;
  std::size_t mlp_hidden = 0;  // 0 means 4 * dim
  // One block's weights reused for every layer.
  bool shared = false;

  std::size_t head_dim() const { return dim / heads; }
  std::size_t hidden() const { return mlp_hidden == 0 ? 4 * dim : mlp_hidden; }
  void validate() const;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams init(std::size_t dim);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Projections of one attention head, each D -> D_h.
struct HeadParams {
  Tensor wq, bq, wk, bk, wv, bv;
};

struct BlockParams {
  LayerNormParams norm1;
  // Per-head q/k/v projections stored side by side: column block h of wq
  // is head h's query projection.
  Tensor wq, bq, wk, bk, wv, bv;
  Tensor w_out, b_out;  // W_MSA, k*D_h -> D
  LayerNormParams norm2;
  Tensor w_fc1, b_fc1, w_fc2, b_fc2;

  static BlockParams init(const TransformerConfig& cfg, Rng& rng);
  HeadParams head(std::size_t h, std::size_t head_dim) const;
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct EncoderParams {
  std::vector<BlockParams> blocks;
  LayerNormParams final_norm;

  static EncoderParams init(const TransformerConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// Attention matrices captured during a forward pass: [layer][head] -> N x N.
struct AttentionTrace {
  std::vector<std::vector<Tensor>> layers;
};

// softmax(q k^T / sqrt(D_h)) v for q, k, v of shape N x D_h. When
// `attention` is non-null it receives a detached copy of A.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, Tensor* attention = nullptr);

// One self-attention head on z [N x D] -> [N x D_h].
Tensor self_attention(const Tensor& z, const HeadParams& head, Tensor* attention = nullptr);

// Multi-head self-attention: [SA_1(z), ..., SA_k(z)] W_MSA + b.
Tensor msa(const Tensor& z, const BlockParams& params, std::size_t heads, std::vector<Tensor>* attention = nullptr);

Tensor transformer_block(const Tensor& z, const BlockParams& params, const TransformerConfig& cfg,
                         std::vector<Tensor>* attention = nullptr);

// cfg.layers blocks (or one shared block applied cfg.layers times) and the
// terminal layer norm.
Tensor encoder_stack(const Tensor& z, const TransformerConfig& cfg, const EncoderParams& params,
                     AttentionTrace* trace = nullptr);

std::size_t layer_norm_param_count(std::size_t dim);
std::size_t block_param_count(const TransformerConfig& cfg);
// Parameters held by the blocks only (terminal norm excluded).
std::size_t encoder_block_param_count(const TransformerConfig& cfg);
std::size_t encoder_param_count(const TransformerConfig& cfg);

// Multiply-accumulates of one encoder_stack forward over `tokens` tokens:
// q/k/v/output projections, attention scores, attention-weighted values and
// the two MLP layers.
std::uint64_t encoder_macs(const TransformerConfig& cfg, std::size_t tokens);

}  // namespace restr
