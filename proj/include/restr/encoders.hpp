#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "restr/config.hpp"
#include "restr/init.hpp"
#include "restr/tensor.hpp"
#include "restr/transformer.hpp"

namespace restr {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

// Closed token vocabulary; line number in vocab.txt is the id.
class Vocabulary {
 public:
  Vocabulary();  // only the reserved <pad> and <unk>
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;  // kUnkId when absent
  const std::string& token(int id) const;
  int add(const std::string& token);

  // Whitespace tokenization.
  std::vector<int> encode(const std::string& text) const;
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// image [H x W x C] -> [N_v x P*P*C], patches row-major over the patch grid,
// each row the row-major flattening of one P x P x C block.
Tensor patchify(const Tensor& image, std::size_t patch);
Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch);

// (pos, 2i) = sin(pos / 10000^(2i/D)), (pos, 2i+1) = cos(same).
Tensor sinusoidal_table(std::size_t length, std::size_t dim);

struct VisionParams {
  Tensor patch_weight;  // P*P*C x D_v
  Tensor patch_bias;    // D_v
  Tensor positions;     // N_v x D_v, learned
  EncoderParams encoder;

  static VisionParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LanguageParams {
  Tensor token_embedding;  // vocab x D_l
  EncoderParams encoder;
  Tensor positions;  // N_l x D_l sinusoidal, constant

  static LanguageParams init(const ModelConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

// z_v = Transformers(patch_embed(image) + E_pos) -> [N_v x D_v].
Tensor vision_encode(const Tensor& image, const VisionParams& params, const ModelConfig& cfg);

// Pads (or truncates, with a warning) ids to N_l using kPadId.
std::vector<int> pad_tokens(std::span<const int> ids, std::size_t max_tokens);

// z_l = Transformers(embed(ids) + e_pos) -> [N_l x D_l]. PAD positions take
// part in attention like any other token.
Tensor language_encode(std::span<const int> ids, const LanguageParams& params, const ModelConfig& cfg);

std::size_t vision_param_count(const ModelConfig& cfg);
std::size_t language_param_count(const ModelConfig& cfg);

}  // namespace restr
