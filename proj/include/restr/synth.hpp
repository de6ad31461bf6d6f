#pragma once

// Synthetic referring-segmentation data: scenes of colored shapes,
// templated referring expressions and their exact target masks.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "restr/encoders.hpp"
#include "restr/error.hpp"
#include "restr/tensor.hpp"

namespace restr {

enum class ShapeKind { kSquare, kCircle, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow };
enum class Relation { kLeftOf, kRightOf, kAbove, kBelow };

std::string to_string(ShapeKind s);
std::string to_string(Color c);
std::string to_string(Relation r);

// Integer geometry so the rasterization is exact:
//   square    |x-cx| <= r and |y-cy| <= r
//   circle    (x-cx)^2 + (y-cy)^2 <= r^2
//   triangle  apex up: cy-r <= y <= cy+r and 2|x-cx| <= y-(cy-r)
struct SceneObject {
  ShapeKind shape = ShapeKind::kSquare;
  Color color = Color::kRed;
  int cx = 0, cy = 0, radius = 1;

  bool contains(int x, int y) const;
};

struct Scene {
  int height = 0, width = 0;
  std::vector<SceneObject> objects;
};

class AmbiguityError : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

// Index of the unique object an expression refers to. Grammar:
//   <color> <shape>
//   <shape> <relation> the <color> <shape>      relation: left of | right of | above | below
// Relations compare centers (left of: target.cx < anchor.cx, above: target.cy < anchor.cy).
// Throws AmbiguityError for zero or several referents, ConfigError for text
// outside the grammar.
std::size_t resolve(const Scene& scene, const std::vector<std::string>& words);

// RGB in [0,1], pure channel colors on a black background.
Tensor render_image(const Scene& scene);
// H x W x 1 with 1 on the object's pixels.
Tensor render_mask(const Scene& scene, std::size_t object);

// <pad>, <unk>, colors, shapes, relation words.
Vocabulary synth_vocabulary();

struct Sample {
  Tensor image;             // H x W x 3
  std::vector<int> tokens;  // unpadded expression
  Tensor mask;              // H x W x 1, {0,1}
  std::size_t image_id = 0;  // samples sharing an image share this id
};

struct Dataset {
  std::vector<Sample> samples;
  Vocabulary vocab;
  // Populated by generate() only.
  std::vector<Scene> scenes;
  std::vector<std::size_t> targets;
};

struct GenerateOptions {
  std::uint64_t seed = 0;
  std::size_t count = 16;
  int height = 64;
  int width = 64;
  std::size_t expressions_per_image = 2;
};

// Each scene holds 2-4 disjoint objects and contributes
// expressions_per_image samples with distinct targets; the first
// expression of every scene uses a spatial relation.
Dataset generate(const GenerateOptions& options);

// Directory layout: index.txt ("RSTRDS 1", then "id H W tok..." per
// sample), NNNN.img (float32 LE, H*W*3), NNNN.msk (bytes 0/1, H*W),
// vocab.txt.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
// Throws DataError on a missing, truncated or inconsistent directory.
Dataset load_dataset(const std::filesystem::path& dir);

struct IntegrityReport {
  std::size_t indexed = 0;
  std::size_t image_files = 0;
  std::size_t mask_files = 0;
  bool ok = false;
};

IntegrityReport scan_dataset_dir(const std::filesystem::path& dir);

}  // namespace restr
