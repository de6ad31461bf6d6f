#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "restr/error.hpp"
#include "restr/metrics.hpp"
#include "restr/synth.hpp"
#include "test_util.hpp"

using namespace restr;
using restr::testing::bit_equal;

namespace fs = std::filesystem;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("resolve") {
  Scene one{32, 32, {{ShapeKind::kCircle, Color::kGreen, 16, 16, 5}}};
  CHECK(resolve(one, words("green circle")) == 0);

  Scene scene{64, 64,
              {{ShapeKind::kSquare, Color::kRed, 10, 30, 4},
               {ShapeKind::kCircle, Color::kBlue, 32, 30, 5},
               {ShapeKind::kSquare, Color::kGreen, 54, 30, 4}}};
  CHECK(resolve(scene, words("square left of the blue circle")) == 0);
  CHECK(resolve(scene, words("square right of the blue circle")) == 2);
  CHECK_THROWS_AS(resolve(scene, words("square above the blue circle")), AmbiguityError);
  CHECK_THROWS_AS(resolve(scene, words("yellow square")), AmbiguityError);
  CHECK_THROWS_AS(resolve(scene, words("big red square")), ConfigError);
}

TEST_CASE("rasterization") {
  SceneObject sq{ShapeKind::kSquare, Color::kRed, 10, 10, 2};
  CHECK(sq.contains(8, 12));
  CHECK_FALSE(sq.contains(7, 10));
  SceneObject tri{ShapeKind::kTriangle, Color::kRed, 10, 10, 4};
  CHECK(tri.contains(10, 6));
  CHECK_FALSE(tri.contains(11, 6));
  CHECK(tri.contains(6, 14));

  Scene scene{16, 16, {sq}};
  Tensor img = render_image(scene);
  CHECK(img.at(10, 10, 0) == 1.0);
  CHECK(img.at(10, 10, 1) == 0.0);
  CHECK(img.at(0, 0, 0) == 0.0);
}

TEST_CASE("generated scenes satisfy their invariants") {
  GenerateOptions opts;
  opts.seed = 3;
  opts.count = 1000;
  opts.height = opts.width = 48;
  const Dataset data = generate(opts);
  REQUIRE(data.samples.size() == 1000);
  std::set<std::size_t> lengths;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    const Scene& scene = data.scenes[s.image_id];
    std::vector<std::string> ws;
    for (int t : s.tokens) {
      REQUIRE(t > kUnkId);
      REQUIRE(static_cast<std::size_t>(t) < data.vocab.size());
      ws.push_back(data.vocab.token(t));
    }
    lengths.insert(ws.size());
    REQUIRE(resolve(scene, ws) == data.targets[i]);
    REQUIRE(bit_equal(s.mask, render_mask(scene, data.targets[i])));
    REQUIRE(bit_equal(s.image, render_image(scene)));
    double area = 0.0;
    for (double v : s.mask.values()) area += v;
    REQUIRE(area > 0.0);
    for (const auto& o : scene.objects) {
      REQUIRE(o.cx - o.radius >= 0);
      REQUIRE(o.cy - o.radius >= 0);
      REQUIRE(o.cx + o.radius < 48);
      REQUIRE(o.cy + o.radius < 48);
    }
    for (std::size_t a = 0; a < scene.objects.size(); ++a) {
      for (std::size_t b = a + 1; b < scene.objects.size(); ++b) {
        Overlap ov = overlap(render_mask(scene, a), render_mask(scene, b));
        REQUIRE(ov.intersection == 0);
      }
    }
  }
  std::vector<std::size_t> lens(lengths.begin(), lengths.end());
  std::set<std::string> buckets;
  for (auto len : lens) {
    for (const auto& b : parse_buckets("1-2,3,4-5,6-20")) {
      if (len >= b.lo && len <= b.hi) buckets.insert(b.label());
    }
  }
  CHECK(buckets.size() >= 3);
  CHECK(*lengths.rbegin() <= 20);
}

TEST_CASE("two expressions per image refer to different objects") {
  GenerateOptions opts;
  opts.seed = 4;
  opts.count = 40;
  const Dataset data = generate(opts);
  for (std::size_t i = 0; i + 1 < data.samples.size(); i += 2) {
    CHECK(data.samples[i].image_id == data.samples[i + 1].image_id);
    CHECK(data.targets[i] != data.targets[i + 1]);
  }
}

TEST_CASE("dataset files") {
  GenerateOptions opts;
  opts.seed = 7;
  opts.count = 6;
  opts.height = opts.width = 32;
  const fs::path a = temp_dir("restr_ds_a"), b = temp_dir("restr_ds_b");
  const Dataset data = generate(opts);
  save_dataset(data, a);
  save_dataset(generate(opts), b);
  for (const auto& entry : fs::directory_iterator(a)) {
    CHECK(read_all(entry.path()) == read_all(b / entry.path().filename()));
  }

  const Dataset back = load_dataset(a);
  REQUIRE(back.samples.size() == data.samples.size());
  CHECK(back.vocab.tokens() == data.vocab.tokens());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    CHECK(bit_equal(back.samples[i].image, data.samples[i].image));
    CHECK(bit_equal(back.samples[i].mask, data.samples[i].mask));
    CHECK(back.samples[i].tokens == data.samples[i].tokens);
    CHECK(back.samples[i].image_id == data.samples[i].image_id);
  }

  const auto report = scan_dataset_dir(a);
  CHECK(report.ok);
  CHECK(report.indexed == 6);
  CHECK(report.image_files == 6);
  CHECK(report.mask_files == 6);

  fs::resize_file(a / "0002.img", 100);
  CHECK_THROWS_AS(load_dataset(a), DataError);
  fs::remove(b / "0001.msk");
  CHECK_FALSE(scan_dataset_dir(b).ok);
  CHECK_THROWS_AS(load_dataset(b), DataError);
  CHECK_THROWS_AS(load_dataset(temp_dir("restr_ds_missing")), DataError);
  fs::remove_all(a);
  fs::remove_all(b);
}
