#include <filesystem>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "restr/checkpoint.hpp"
#include "restr/error.hpp"
#include "restr/metrics.hpp"
#include "restr/render.hpp"
#include "restr/run_config.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::bit_equal;
using restr::testing::randn;

namespace fs = std::filesystem;

namespace {

ModelConfig small() {
  ModelConfig cfg;
  cfg.image_h = cfg.image_w = 16;
  cfg.patch_size = 4;
  cfg.vision_dim = cfg.language_dim = cfg.fusion_dim = 8;
  cfg.heads = 2;
  cfg.vision_layers = cfg.language_layers = 1;
  return cfg;
}

std::string bytes_of(Model& model, const OptimizerSnapshot* opt = nullptr) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, model, opt);
  return os.str();
}

}  // namespace

TEST_CASE("checkpoint round trip") {
  Model model(small(), 3);
  std::istringstream in(bytes_of(model), std::ios::binary);
  LoadedCheckpoint back = read_checkpoint(in);
  CHECK_FALSE(back.optimizer.has_value());
  CHECK(back.model.config().fusion_variant == model.config().fusion_variant);
  const auto a = model.parameters();
  const auto b = back.model.parameters();
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) {
      const double x = a[i].tensor.values()[j], y = b[i].tensor.values()[j];
      if (x != 0.0) worst = std::max(worst, std::abs(x - y) / std::abs(x));
      else CHECK(y == 0.0);
    }
  }
  CHECK(worst <= 1e-6);
  CHECK(bytes_of(back.model) == bytes_of(model));
}

TEST_CASE("checkpoint with optimizer state") {
  Model model(small(), 4);
  OptimizerSnapshot snap;
  snap.iteration = 17;
  snap.state.step = 17;
  for (const auto& p : model.parameters()) {
    snap.state.first.emplace_back(p.tensor.numel(), 0.25);
    snap.state.second.emplace_back(p.tensor.numel(), 0.5);
  }
  const std::string blob = bytes_of(model, &snap);
  std::istringstream in(blob, std::ios::binary);
  LoadedCheckpoint back = read_checkpoint(in);
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->iteration == 17);
  CHECK(back.optimizer->state.first == snap.state.first);
  CHECK(bytes_of(back.model, &*back.optimizer) == blob);
}

TEST_CASE("checkpoint errors") {
  Model model(small(), 5);
  std::string blob = bytes_of(model);
  std::string wrong_version = blob;
  wrong_version[4] = 9;
  std::istringstream v(wrong_version, std::ios::binary);
  CHECK_THROWS_WITH_AS(read_checkpoint(v), doctest::Contains("version 9"), DataError);

  std::istringstream magic("XXXX" + blob.substr(4), std::ios::binary);
  CHECK_THROWS_AS(read_checkpoint(magic), DataError);
  std::istringstream cut(blob.substr(0, blob.size() / 2), std::ios::binary);
  CHECK_THROWS_AS(read_checkpoint(cut), DataError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/restr.ckpt"), DataError);
}

TEST_CASE("run config") {
  std::istringstream in(
      "# comment\n"
      "patch_size = 4   # trailing\n"
      "\n"
      "fusion_variant = CME_SHARED\n"
      "base_lr = 0.001\n"
      "use_decoder = false\n");
  RunConfig cfg = parse_run_config(in);
  CHECK(cfg.model.patch_size == 4);
  CHECK(cfg.model.fusion_variant == FusionVariant::kCMEShared);
  CHECK(cfg.train.base_lr == 0.001);
  CHECK_FALSE(cfg.model.use_decoder);
  CHECK(cfg.train.tau == 0.8);
  CHECK(cfg.train.lambda == 0.1);
  CHECK(cfg.train.weight_decay == 5e-4);

  std::istringstream unknown("patch = 4\n");
  CHECK_THROWS_WITH_AS(parse_run_config(unknown), doctest::Contains("unknown config key 'patch'"), ConfigError);
  std::istringstream dup("tau = 0.5\ntau = 0.6\n");
  CHECK_THROWS_AS(parse_run_config(dup), ConfigError);
  std::istringstream bad("heads = two\n");
  CHECK_THROWS_AS(parse_run_config(bad), ConfigError);

  apply_overrides(cfg, {{"tau", "0.6"}, {"heads", "2"}});
  CHECK(cfg.train.tau == 0.6);
  CHECK_THROWS_AS(apply_overrides(cfg, {{"nope", "1"}}), ConfigError);

  std::istringstream again(format_run_config(cfg, true));
  RunConfig back = parse_run_config(again);
  CHECK(format_run_config(back) == format_run_config(cfg));
  for (const auto& key : config_keys()) CHECK(is_config_key(key.name));

  CHECK(parse_model_config(format_model_config(cfg.model)).patch_size == 4);
}

TEST_CASE("rendering") {
  const fs::path dir = fs::temp_directory_path() / "restr_render_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ModelConfig cfg = small();
  cfg.image_h = cfg.image_w = 32;
  GenerateOptions opts;
  opts.count = 2;
  opts.height = opts.width = 32;
  const Dataset data = generate(opts);
  cfg.vocab_size = data.vocab.size();
  Model m2(cfg, 6);
  const Sample& s = data.samples[0];
  const auto files = render_sample(m2, s, dir, "s0");

  const auto pred = m2.forward(s.image, s.tokens);
  const Tensor mask = binarize(pred.pixel_logits);
  const Raster r = read_pnm(files.mask);
  CHECK(r.height == 32);
  CHECK(r.width == 32);
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) CHECK((r.at(y, x) == 255) == (mask.at(y, x, 0) == 1.0));
  }
  const Raster patches = read_pnm(files.patches);
  CHECK(patches.height == 32);
  CHECK(patches.width == 32);

  cv::Mat gray = cv::imread(files.mask.string(), cv::IMREAD_UNCHANGED);
  REQUIRE_FALSE(gray.empty());
  CHECK(gray.rows == 32);
  CHECK(gray.cols == 32);
  CHECK(gray.channels() == 1);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) CHECK(gray.at<std::uint8_t>(y, x) == r.at(y, x));
  }
  cv::Mat coarse = cv::imread(files.patches.string(), cv::IMREAD_UNCHANGED);
  CHECK(coarse.rows == 32);
  cv::Mat overlay = cv::imread(files.overlay.string(), cv::IMREAD_UNCHANGED);
  REQUIRE_FALSE(overlay.empty());
  CHECK(overlay.channels() == 3);
  CHECK(overlay.rows == 32);
  fs::remove_all(dir);
}

TEST_CASE("boundary overlay") {
  Tensor image = Tensor::zeros({5, 5, 3});
  Tensor mask({5, 5, 1});
  for (std::size_t y = 1; y < 4; ++y) {
    for (std::size_t x = 1; x < 4; ++x) mask.at(y, x, 0) = 1.0;
  }
  const Raster r = boundary_overlay(image, mask);
  CHECK(r.at(1, 1, 0) == 255);
  CHECK(r.at(2, 2, 0) == 0);
  CHECK(r.at(0, 0, 0) == 0);

  Tensor probs({4, 1}, {0.7, 0.2, 0.5, 0.49});
  const Raster p = patch_raster(probs, 2, 2, 3);
  CHECK(p.height == 6);
  CHECK(p.at(0, 0) == 255);
  CHECK(p.at(0, 5) == 0);
  CHECK(p.at(5, 0) == 255);
  CHECK(p.at(5, 5) == 0);
}
