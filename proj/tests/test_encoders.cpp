#include <filesystem>

#include "doctest.h"
#include "restr/encoders.hpp"
#include "restr/error.hpp"
#include "restr/ops.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::bit_equal;
using restr::testing::max_abs_diff;
using restr::testing::randn;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.image_h = 16;
  cfg.image_w = 24;
  cfg.patch_size = 4;
  cfg.vision_dim = 16;
  cfg.language_dim = 12;
  cfg.fusion_dim = 16;
  cfg.heads = 2;
  cfg.vision_layers = cfg.language_layers = 2;
  cfg.max_tokens = 8;
  cfg.vocab_size = 10;
  return cfg;
}

// Swaps patches a and b of an H x W x C image.
Tensor swap_patches(const Tensor& image, std::size_t patch, std::size_t a, std::size_t b) {
  Tensor p = patchify(image, patch);
  const std::size_t d = p.dim(1);
  for (std::size_t j = 0; j < d; ++j) std::swap(p.at(a, j), p.at(b, j));
  return unpatchify(p, image.dim(0), image.dim(1), image.dim(2), patch);
}

}  // namespace

TEST_CASE("patchify") {
  Tensor img = randn({4, 4, 3}, 1);
  Tensor one = patchify(img, 4);
  CHECK(one.shape() == Shape{1, 48});
  CHECK(std::equal(one.values().begin(), one.values().end(), img.values().begin()));

  CHECK(patchify(Tensor({480, 480, 3}), 16).dim(0) == 900);

  Tensor x = randn({8, 12, 3}, 2);
  Tensor p = patchify(x, 4);
  CHECK(p.shape() == Shape{6, 48});
  CHECK(bit_equal(unpatchify(p, 8, 12, 3, 4), x));
  // Patch 1 is the second patch of the top row: pixel (0, 4).
  CHECK(p.at(1, 0) == x.at(0, 4, 0));
  CHECK(p.at(3, 0) == x.at(4, 0, 0));
  CHECK_THROWS_AS(patchify(x, 5), ConfigError);
}

TEST_CASE("sinusoidal table") {
  Tensor t = sinusoidal_table(20, 32);
  for (std::size_t j = 0; j < 32; ++j) CHECK(t.at(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  for (double v : t.values()) CHECK(std::abs(v) <= 1.0);
  for (std::size_t a = 0; a < 20; ++a) {
    for (std::size_t b = a + 1; b < 20; ++b) {
      CHECK(max_abs_diff(ops::slice(t, 0, a, a + 1), ops::slice(t, 0, b, b + 1)) > 1e-6);
    }
  }
  CHECK_THROWS_AS(sinusoidal_table(4, 5), ConfigError);
}

TEST_CASE("vision encoder") {
  const ModelConfig cfg = small_config();
  Rng rng(3);
  VisionParams params = VisionParams::init(cfg, rng);
  Tensor img = randn({16, 24, 3}, 4);
  CHECK(vision_encode(img, params, cfg).shape() == Shape{cfg.num_patches(), cfg.vision_dim});

  for (auto& v : params.positions.values()) v = 0.0;
  Tensor swapped = swap_patches(img, 4, 2, 17);
  Tensor a = vision_encode(img, params, cfg);
  Tensor b = vision_encode(swapped, params, cfg);
  for (std::size_t j = 0; j < cfg.vision_dim; ++j) {
    CHECK(std::abs(a.at(2, j) - b.at(17, j)) <= 1e-9);
    CHECK(std::abs(a.at(17, j) - b.at(2, j)) <= 1e-9);
  }

  params.positions = randn({cfg.num_patches(), cfg.vision_dim}, 5, 0.5).set_requires_grad(true);
  Tensor c = vision_encode(img, params, cfg);
  Tensor d = vision_encode(swapped, params, cfg);
  double dev = 0.0;
  for (std::size_t j = 0; j < cfg.vision_dim; ++j) dev = std::max(dev, std::abs(c.at(2, j) - d.at(17, j)));
  CHECK(dev > 1e-3);

  std::size_t counted = 0;
  params.visit("v", [&](const std::string&, Tensor& t, bool) { counted += t.numel(); });
  CHECK(counted == vision_param_count(cfg));
  CHECK(vision_param_count(cfg) == 48 * 16 + 16 + 24 * 16 + encoder_param_count(cfg.vision_encoder()));
}

TEST_CASE("language encoder") {
  const ModelConfig cfg = small_config();
  Rng rng(6);
  LanguageParams params = LanguageParams::init(cfg, rng);
  const std::vector<int> ids{3, 5, 2};
  Tensor a = language_encode(ids, params, cfg);
  CHECK(a.shape() == Shape{cfg.max_tokens, cfg.language_dim});
  CHECK(language_encode(std::vector<int>{4}, params, cfg).shape() == a.shape());
  CHECK(bit_equal(a, language_encode(ids, params, cfg)));
  CHECK(max_abs_diff(a, language_encode(std::vector<int>{3, 6, 2}, params, cfg)) > 1e-6);

  CHECK(pad_tokens(ids, 5) == std::vector<int>{3, 5, 2, kPadId, kPadId});
  CHECK(pad_tokens(std::vector<int>{1, 2, 3, 4}, 2).size() == 2);
  CHECK_THROWS_AS(language_encode(std::vector<int>{99}, params, cfg), ConfigError);

  std::size_t counted = 0;
  params.visit("l", [&](const std::string&, Tensor& t, bool) { counted += t.numel(); });
  CHECK(counted == language_param_count(cfg));
}

TEST_CASE("vocabulary") {
  Vocabulary v;
  CHECK(v.size() == 2);
  CHECK(v.id("<pad>") == kPadId);
  const int red = v.add("red");
  CHECK(v.add("red") == red);
  CHECK(v.id("blue") == kUnkId);
  CHECK(v.encode("red  blue") == std::vector<int>{red, kUnkId});
  CHECK(v.decode(v.encode("red red")) == "red red");

  const auto path = std::filesystem::temp_directory_path() / "restr_vocab_test.txt";
  v.save(path);
  Vocabulary back = Vocabulary::load(path);
  CHECK(back.tokens() == v.tokens());
  std::filesystem::remove(path);
}
