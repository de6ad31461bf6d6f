#pragma once

#include <string>
#include <vector>

#include "restr/config.hpp"
#include "restr/init.hpp"
#include "restr/tensor.hpp"

namespace restr {

// K = log2(P) blocks; block i maps c_i -> c_i / 2 channels with c_0 = 2D,
// followed by a final c_K -> 1 projection.
struct DecoderParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Tensor out_weight, out_bias;

  static DecoderParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  // Input channel count of every block plus the final projection's input.
  std::vector<std::size_t> channel_chain() const;
};

// z_v' e_s'^T / sqrt(D) -> [N_v x 1]
Tensor patch_logits(const Tensor& visual, const Tensor& seed);
// sigmoid(patch_logits) -> [N_v x 1] in (0, 1).
Tensor patch_predict(const Tensor& visual, const Tensor& seed);

// Row i of z_v' scaled by y_p[i].
Tensor mask_features(const Tensor& visual, const Tensor& patch_probs);

// [z_v, z_masked] reshaped to the (H/P) x (W/P) patch grid, K blocks of
// {x2 upsample, channel-halving linear, GELU}, then a linear to one channel.
// Returns [H x W x 1] logits.
Tensor decode_pixels(const Tensor& visual, const Tensor& masked, const DecoderParams& params, const ModelConfig& cfg);

// Patch logits replicated over each P x P patch -> [H x W x 1].
Tensor patch_logits_to_pixels(const Tensor& patch_logit_column, const ModelConfig& cfg);

std::size_t decoder_param_count(const ModelConfig& cfg);

}  // namespace restr
