#include "restr/decoder.hpp"

#include <cmath>

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

DecoderParams DecoderParams::init(const ModelConfig& cfg, Rng& rng) {
  DecoderParams p;
  std::size_t c = 2 * cfg.fusion_dim;
  for (std::size_t i = 0; i < cfg.decoder_blocks(); ++i) {
    p.weights.push_back(trunc_normal({c, c / 2}, 0.02, rng).set_requires_grad(true));
    p.biases.push_back(Tensor::zeros({c / 2}).set_requires_grad(true));
    c /= 2;
  }
  p.out_weight = trunc_normal({c, 1}, 0.02, rng).set_requires_grad(true);
  p.out_bias = Tensor::zeros({1}).set_requires_grad(true);
  return p;
}

void DecoderParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    fn(prefix + ".block" + std::to_string(i) + ".weight", weights[i], true);
    fn(prefix + ".block" + std::to_string(i) + ".bias", biases[i], false);
  }
  fn(prefix + ".out_weight", out_weight, true);
  fn(prefix + ".out_bias", out_bias, false);
}

std::vector<std::size_t> DecoderParams::channel_chain() const {
  std::vector<std::size_t> chain;
  for (const auto& w : weights) chain.push_back(w.dim(0));
  chain.push_back(out_weight.dim(0));
  return chain;
}

Tensor patch_logits(const Tensor& visual, const Tensor& seed) {
  if (visual.rank() != 2 || seed.rank() != 2 || seed.dim(0) != 1 || visual.dim(1) != seed.dim(1)) {
    throw ConfigError("patch_predict: features " + shape_str(visual.shape()) + " and classifier " +
                      shape_str(seed.shape()) + " disagree");
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(visual.dim(1)));
  return ops::scale(ops::matmul(visual, ops::transpose(seed)), norm);
}

Tensor patch_predict(const Tensor& visual, const Tensor& seed) { return ops::sigmoid(patch_logits(visual, seed)); }

Tensor mask_features(const Tensor& visual, const Tensor& patch_probs) {
  if (patch_probs.rank() != 2 || patch_probs.dim(1) != 1 || visual.rank() != 2 ||
      patch_probs.dim(0) != visual.dim(0)) {
    throw ConfigError("mask_features: features " + shape_str(visual.shape()) + " and patch predictions " +
                      shape_str(patch_probs.shape()) + " disagree");
  }
  return ops::hadamard(visual, patch_probs);
}

Tensor decode_pixels(const Tensor& visual, const Tensor& masked, const DecoderParams& params, const ModelConfig& cfg) {
  const std::size_t k = cfg.decoder_blocks();
  if (params.weights.size() != k) {
    throw ConfigError("decode_pixels: decoder has " + std::to_string(params.weights.size()) +
                      " blocks but log2(P) = " + std::to_string(k));
  }
  if (visual.shape() != masked.shape() || visual.rank() != 2 || visual.dim(0) != cfg.num_patches()) {
    throw ConfigError("decode_pixels: features " + shape_str(visual.shape()) + " / " + shape_str(masked.shape()) +
                      " do not form a " + std::to_string(cfg.grid_h()) + "x" + std::to_string(cfg.grid_w()) +
                      " patch grid");
  }
  std::size_t h = cfg.grid_h(), w = cfg.grid_w();
  Tensor x = ops::concat({visual, masked}, 1);  // rows already in patch-grid order
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t c = x.dim(1);
    if (params.weights[i].dim(0) != c || c % 2 != 0) {
      throw ConfigError("decode_pixels: block " + std::to_string(i) + " expects " +
                        std::to_string(params.weights[i].dim(0)) + " channels, got " + std::to_string(c));
    }
    // Per-pixel projection commutes with both upsampling modes (each output
    // is an affine combination with weights summing to one), so project at
    // the coarse resolution.
    Tensor grid = ops::reshape(ops::linear(x, params.weights[i], params.biases[i]), {h, w, c / 2});
    grid = cfg.decoder_upsample == UpsampleMode::kNearest ? ops::upsample2x(grid) : ops::upsample2x_bilinear(grid);
    h *= 2;
    w *= 2;
    x = ops::gelu(ops::reshape(grid, {h * w, c / 2}));
  }
  return ops::reshape(ops::linear(x, params.out_weight, params.out_bias), {h, w, 1});
}

Tensor patch_logits_to_pixels(const Tensor& patch_logit_column, const ModelConfig& cfg) {
  Tensor grid = ops::reshape(patch_logit_column, {cfg.grid_h(), cfg.grid_w(), 1});
  for (std::size_t i = 0; i < cfg.decoder_blocks(); ++i) grid = ops::upsample2x(grid);
  return grid;
}

std::size_t decoder_param_count(const ModelConfig& cfg) {
  std::size_t c = 2 * cfg.fusion_dim, total = 0;
  for (std::size_t i = 0; i < cfg.decoder_blocks(); ++i) {
    total += c * (c / 2) + c / 2;
    c /= 2;
  }
  return total + c + 1;
}

}  // namespace restr
