#include "doctest.h"
#include "restr/error.hpp"
#include "restr/model.hpp"
#include "restr/op_checks.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::bit_equal;
using restr::testing::randn;

TEST_CASE("model forward contract") {
  ModelConfig cfg;
  cfg.image_h = cfg.image_w = 32;
  cfg.patch_size = 8;
  cfg.vision_dim = cfg.language_dim = cfg.fusion_dim = 16;
  cfg.heads = 2;
  for (auto v : {FusionVariant::kVME, FusionVariant::kIME, FusionVariant::kCME, FusionVariant::kCMEShared}) {
    cfg.fusion_variant = v;
    Model model(cfg, 1);
    Tensor image = randn({32, 32, 3}, 2);
    const std::vector<int> tokens{3, 4, 5};
    const auto a = model.forward(image, tokens);
    const auto b = model.forward(image, tokens);
    CHECK(a.patch_probs.shape() == Shape{16, 1});
    CHECK(a.pixel_logits.shape() == Shape{32, 32, 1});
    CHECK(bit_equal(a.patch_probs, b.patch_probs));
    CHECK(bit_equal(a.pixel_logits, b.pixel_logits));
    for (double p : a.patch_probs.values()) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
    CHECK(model.parameter_count() == model_param_count(cfg));
  }
  CHECK_THROWS_AS(Model(cfg, 1).forward(randn({16, 16, 3}, 3), std::vector<int>{2}), ConfigError);
}

TEST_CASE("same seed gives the same parameters") {
  ModelConfig cfg;
  Model a(cfg, 7), b(cfg, 7), c(cfg, 8);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(bit_equal(pa[i].tensor, pb[i].tensor));
    differs = differs || !bit_equal(pa[i].tensor, pc[i].tensor);
  }
  CHECK(differs);
}

TEST_CASE("decay exemptions") {
  Model model(ModelConfig{}, 1);
  for (const auto& p : model.parameters()) {
    const std::string leaf = p.name.substr(p.name.rfind('.') + 1);
    const bool exempt = leaf.starts_with("b") || leaf.ends_with("bias") || leaf.ends_with("_b") || leaf == "gain" ||
                        leaf == "positions" || leaf == "seed";
    INFO(p.name);
    CHECK(p.decay == !exempt);
  }
}

TEST_CASE("without the decoder pixels replicate patch logits") {
  ModelConfig cfg;
  cfg.image_h = cfg.image_w = 32;
  cfg.use_decoder = false;
  Model model(cfg, 3);
  const auto out = model.forward(randn({32, 32, 3}, 4), std::vector<int>{2, 3});
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      const double p = out.patch_probs.at((y / 8) * 4 + x / 8, 0);
      CHECK(out.pixel_logits.at(y, x, 0) == doctest::Approx(std::log(p / (1.0 - p))).epsilon(1e-9));
    }
  }
}

TEST_CASE("end-to-end gradient on sampled parameters") {
  const auto report = run_model_check(gradcheck_model_config(), 50, 0);
  CHECK(report.entries.size() == 50);
  CHECK(report.max_rel_error <= 1e-3);
}
