#pragma once

#include <cstddef>
#include <string>

#include "restr/transformer.hpp"

namespace restr {

// Topology of the multimodal fusion encoder.
//   kVME        one stack over [visual, linguistic, seed]
//   kIME        visual-linguistic stack; seed stack over the raw linguistic features
//   kCME        visual-linguistic stack; seed stack over its linguistic outputs
//   kCMEShared  kCME with one block's weights reused across each sub-encoder's layers
enum class FusionVariant { kVME, kIME, kCME, kCMEShared };

std::string to_string(FusionVariant v);
FusionVariant parse_fusion_variant(const std::string& text);

enum class UpsampleMode { kNearest, kBilinear };

std::string to_string(UpsampleMode m);
UpsampleMode parse_upsample_mode(const std::string& text);

struct ModelConfig {
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t channels = 3;
  std::size_t patch_size = 8;
  std::size_t vision_dim = 64;
  std::size_t vision_layers = 2;
  std::size_t language_dim = 64;
  std::size_t language_layers = 2;
  std::size_t max_tokens = 20;
  std::size_t vocab_size = 16;
  std::size_t fusion_dim = 64;
  std::size_t fusion_layers = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  FusionVariant fusion_variant = FusionVariant::kCME;
  UpsampleMode decoder_upsample = UpsampleMode::kBilinear;
  // Without the decoder the pixel logits are the patch logits replicated over each patch.
  bool use_decoder = true;

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  // K = log2(P).
  std::size_t decoder_blocks() const;

  TransformerConfig vision_encoder() const;
  TransformerConfig language_encoder() const;
  // Each fusion sub-encoder; kVME uses fusion_layers in its single stack.
  TransformerConfig fusion_sub_encoder() const;
  TransformerConfig fusion_joint_encoder() const;

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

}  // namespace restr
