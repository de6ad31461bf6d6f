#include "restr/encoders.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "restr/error.hpp"
#include "restr/ops.hpp"

namespace restr {

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.size() < 2) throw ConfigError("vocabulary needs the reserved <pad> and <unk> entries");
  for (auto& t : tokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos) {
    throw ConfigError("vocabulary token '" + token + "' is empty or contains whitespace");
  }
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::istringstream is(text);
  std::vector<int> ids;
  for (std::string word; is >> word;) ids.push_back(id(word));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw DataError("vocabulary " + path.string() + " must start with <pad> and <unk>");
  }
  try {
    return Vocabulary(std::move(tokens));
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

// ---------------------------------------------------------------------------

Tensor patchify(const Tensor& image, std::size_t patch) {
  if (image.rank() != 3) throw ConfigError("patchify: expected H x W x C image, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ConfigError("patchify: image " + shape_str(image.shape()) + " not divisible by patch size " +
                      std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch, row_len = patch * c;
  Tensor out({gh * gw, patch * patch * c});
  const double* src = image.data();
  double* dst = out.data();
  for (std::size_t py = 0; py < gh; ++py) {
    for (std::size_t px = 0; px < gw; ++px) {
      double* prow = dst + (py * gw + px) * patch * row_len;
      for (std::size_t y = 0; y < patch; ++y) {
        std::copy_n(src + ((py * patch + y) * w + px * patch) * c, row_len, prow + y * row_len);
      }
    }
  }
  return out;
}

Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, std::size_t channels,
                  std::size_t patch) {
  if (patch == 0 || height % patch != 0 || width % patch != 0 || patches.rank() != 2 ||
      patches.dim(0) != (height / patch) * (width / patch) || patches.dim(1) != patch * patch * channels) {
    throw ConfigError("unpatchify: patches " + shape_str(patches.shape()) + " do not match image " +
                      std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels));
  }
  const std::size_t gw = width / patch, row_len = patch * channels;
  Tensor out({height, width, channels});
  for (std::size_t i = 0; i < patches.dim(0); ++i) {
    const std::size_t py = i / gw, px = i % gw;
    for (std::size_t y = 0; y < patch; ++y) {
      std::copy_n(patches.data() + i * patch * row_len + y * row_len, row_len,
                  out.data() + ((py * patch + y) * width + px * patch) * channels);
    }
  }
  return out;
}

Tensor sinusoidal_table(std::size_t length, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw ConfigError("sinusoidal_table: dimension " + std::to_string(dim) + " must be even");
  if (length == 0) throw ConfigError("sinusoidal_table: length must be positive");
  Tensor t({length, dim});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      t.at(pos, 2 * i) = std::sin(angle);
      t.at(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

VisionParams VisionParams::init(const ModelConfig& cfg, Rng& rng) {
  VisionParams p;
  p.patch_weight = trunc_normal({cfg.patch_dim(), cfg.vision_dim}, 0.02, rng).set_requires_grad(true);
  p.patch_bias = Tensor::zeros({cfg.vision_dim}).set_requires_grad(true);
  p.positions = trunc_normal({cfg.num_patches(), cfg.vision_dim}, 0.02, rng).set_requires_grad(true);
  p.encoder = EncoderParams::init(cfg.vision_encoder(), rng);
  return p;
}

void VisionParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".patch_weight", patch_weight, true);
  fn(prefix + ".patch_bias", patch_bias, false);
  fn(prefix + ".positions", positions, false);
  encoder.visit(prefix + ".encoder", fn);
}

LanguageParams LanguageParams::init(const ModelConfig& cfg, Rng& rng) {
  LanguageParams p;
  p.token_embedding = trunc_normal({cfg.vocab_size, cfg.language_dim}, 0.02, rng).set_requires_grad(true);
  p.encoder = EncoderParams::init(cfg.language_encoder(), rng);
  p.positions = sinusoidal_table(cfg.max_tokens, cfg.language_dim);
  return p;
}

void LanguageParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".token_embedding", token_embedding, true);
  encoder.visit(prefix + ".encoder", fn);
}

Tensor vision_encode(const Tensor& image, const VisionParams& params, const ModelConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_h || image.dim(1) != cfg.image_w ||
      image.dim(2) != cfg.channels) {
    throw ConfigError("vision_encode: image " + shape_str(image.shape()) + " does not match config " +
                      std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "x" +
                      std::to_string(cfg.channels));
  }
  Tensor tokens = ops::linear(patchify(image, cfg.patch_size), params.patch_weight, params.patch_bias);
  return encoder_stack(ops::add(tokens, params.positions), cfg.vision_encoder(), params.encoder);
}

std::vector<int> pad_tokens(std::span<const int> ids, std::size_t max_tokens) {
  std::vector<int> out(ids.begin(), ids.end());
  if (out.size() > max_tokens) {
    std::clog << "warning: expression of " << out.size() << " tokens truncated to " << max_tokens << '\n';
    out.resize(max_tokens);
  }
  out.resize(max_tokens, kPadId);
  return out;
}

Tensor language_encode(std::span<const int> ids, const LanguageParams& params, const ModelConfig& cfg) {
  const std::vector<int> padded = pad_tokens(ids, cfg.max_tokens);
  Tensor words = ops::embedding(params.token_embedding, padded);
  return encoder_stack(ops::add(words, params.positions), cfg.language_encoder(), params.encoder);
}

std::size_t vision_param_count(const ModelConfig& cfg) {
  return cfg.patch_dim() * cfg.vision_dim + cfg.vision_dim + cfg.num_patches() * cfg.vision_dim +
         encoder_param_count(cfg.vision_encoder());
}

std::size_t language_param_count(const ModelConfig& cfg) {
  return cfg.vocab_size * cfg.language_dim + encoder_param_count(cfg.language_encoder());
}

}  // namespace restr
