#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "restr/config.hpp"
#include "restr/decoder.hpp"
#include "restr/encoders.hpp"
#include "restr/fusion.hpp"
#include "restr/tensor.hpp"

namespace restr {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

struct PredictionPair {
  Tensor patch_probs;   // y_p hat, N_v x 1
  Tensor pixel_logits;  // Y_m hat, H x W x 1
};

class Model {
 public:
  Model() = default;
  // Random initialization; identical seeds give identical parameters.
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Trainable tensors in a fixed order with stable names.
  std::vector<NamedParam> parameters();
  std::size_t parameter_count();

  PredictionPair forward(const Tensor& image, std::span<const int> tokens, FusionTrace* trace = nullptr) const;

  VisionParams vision;
  LanguageParams language;
  FusionParams fusion;
  DecoderParams decoder;

 private:
  ModelConfig config_;
};

// Closed-form total parameter count for a config.
std::size_t model_param_count(const ModelConfig& cfg);

}  // namespace restr
