#include "restr/config.hpp"

#include "restr/error.hpp"

namespace restr {

std::string to_string(FusionVariant v) {
  switch (v) {
    case FusionVariant::kVME: return "VME";
    case FusionVariant::kIME: return "IME";
    case FusionVariant::kCME: return "CME";
    case FusionVariant::kCMEShared: return "CME_SHARED";
  }
  return "?";
}

FusionVariant parse_fusion_variant(const std::string& text) {
  if (text == "VME") return FusionVariant::kVME;
  if (text == "IME") return FusionVariant::kIME;
  if (text == "CME") return FusionVariant::kCME;
  if (text == "CME_SHARED") return FusionVariant::kCMEShared;
  throw ConfigError("unknown fusion variant '" + text + "' (expected VME, IME, CME or CME_SHARED)");
}

std::string to_string(UpsampleMode m) { return m == UpsampleMode::kNearest ? "nearest" : "bilinear"; }

UpsampleMode parse_upsample_mode(const std::string& text) {
  if (text == "nearest") return UpsampleMode::kNearest;
  if (text == "bilinear") return UpsampleMode::kBilinear;
  throw ConfigError("unknown upsample mode '" + text + "' (expected nearest or bilinear)");
}

std::size_t ModelConfig::decoder_blocks() const {
  std::size_t k = 0;
  for (std::size_t p = patch_size; p > 1; p >>= 1) ++k;
  return k;
}

TransformerConfig ModelConfig::vision_encoder() const {
  return {vision_layers, vision_dim, heads, mlp_ratio * vision_dim, false};
}

TransformerConfig ModelConfig::language_encoder() const {
  return {language_layers, language_dim, heads, mlp_ratio * language_dim, false};
}

TransformerConfig ModelConfig::fusion_sub_encoder() const {
  return {fusion_layers / 2, fusion_dim, heads, mlp_ratio * fusion_dim, fusion_variant == FusionVariant::kCMEShared};
}

TransformerConfig ModelConfig::fusion_joint_encoder() const {
  return {fusion_layers, fusion_dim, heads, mlp_ratio * fusion_dim, false};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_h == 0 || image_w == 0 || channels == 0) fail("image dimensions must be positive");
  if (patch_size == 0 || (patch_size & (patch_size - 1)) != 0) {
    fail("patch_size " + std::to_string(patch_size) + " must be a power of two");
  }
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    fail("image " + std::to_string(image_h) + "x" + std::to_string(image_w) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (heads == 0) fail("heads must be positive");
  for (auto [name, d] : {std::pair{"vision_dim", vision_dim}, std::pair{"language_dim", language_dim},
                         std::pair{"fusion_dim", fusion_dim}}) {
    if (d == 0 || d % heads != 0) fail(std::string(name) + " must be a positive multiple of heads");
  }
  if (language_dim % 2 != 0) fail("language_dim must be even for the sinusoidal table");
  if (vision_layers == 0 || language_layers == 0) fail("encoders need at least one layer");
  if (fusion_layers == 0 || fusion_layers % 2 != 0) fail("fusion_layers must be even and positive");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (max_tokens == 0) fail("max_tokens must be positive");
  if (vocab_size < 2) fail("vocab_size must cover the reserved PAD and UNK ids");
  if (use_decoder && (2 * fusion_dim) % (std::size_t{1} << decoder_blocks()) != 0) {
    fail("2*fusion_dim must be divisible by 2^K = " + std::to_string(std::size_t{1} << decoder_blocks()) +
         " for the decoder channel halving");
  }
}

}  // namespace restr
