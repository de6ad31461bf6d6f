#include "restr/model.hpp"

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  vision = VisionParams::init(config_, rng);
  language = LanguageParams::init(config_, rng);
  fusion = FusionParams::init(config_, rng);
  if (config_.use_decoder) decoder = DecoderParams::init(config_, rng);
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out;
  ParamVisitor collect = [&out](const std::string& name, Tensor& t, bool decay) { out.push_back({name, t, decay}); };
  vision.visit("vision", collect);
  language.visit("language", collect);
  fusion.visit("fusion", collect);
  if (config_.use_decoder) decoder.visit("decoder", collect);
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

PredictionPair Model::forward(const Tensor& image, std::span<const int> tokens, FusionTrace* trace) const {
  Tensor z_v = vision_encode(image, vision, config_);
  Tensor z_l = language_encode(tokens, language, config_);
  ProjectedFeatures proj = project(z_v, z_l, fusion);
  FusionOutput fused = fuse(proj.visual, proj.linguistic, fusion, config_, trace);
  Tensor logits = patch_logits(fused.visual, fused.seed);
  PredictionPair out;
  out.patch_probs = ops::sigmoid(logits);
  if (config_.use_decoder) {
    out.pixel_logits = decode_pixels(proj.visual, mask_features(fused.visual, out.patch_probs), decoder, config_);
  } else {
    out.pixel_logits = patch_logits_to_pixels(logits, config_);
  }
  return out;
}

std::size_t model_param_count(const ModelConfig& cfg) {
  const FusionProfile fusion = profile_fusion(cfg);
  return vision_param_count(cfg) + language_param_count(cfg) + fusion.total_params +
         (cfg.use_decoder ? decoder_param_count(cfg) : 0);
}

}  // namespace restr
