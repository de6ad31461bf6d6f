#include "restr/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "restr/error.hpp"
#include "restr/metrics.hpp"

namespace restr {

Raster mask_raster(const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(2) != 1) throw ConfigError("mask_raster: expected H x W x 1, got " + shape_str(mask.shape()));
  Raster r{mask.dim(0), mask.dim(1), 1, {}};
  r.pixels.resize(r.height * r.width);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = mask.data()[i] > 0.5 ? 255 : 0;
  return r;
}

Raster patch_raster(const Tensor& patch_probs, std::size_t grid_h, std::size_t grid_w, std::size_t patch) {
  if (patch_probs.numel() != grid_h * grid_w) {
    throw ConfigError("patch_raster: " + std::to_string(patch_probs.numel()) + " probabilities for a " +
                      std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  Raster r{grid_h * patch, grid_w * patch, 1, {}};
  r.pixels.resize(r.height * r.width);
  for (std::size_t y = 0; y < r.height; ++y) {
    for (std::size_t x = 0; x < r.width; ++x) {
      r.at(y, x) = patch_probs.data()[(y / patch) * grid_w + x / patch] >= 0.5 ? 255 : 0;
    }
  }
  return r;
}

Raster boundary_overlay(const Tensor& image, const Tensor& mask) {
  if (image.rank() != 3 || image.dim(2) != 3) throw ConfigError("boundary_overlay: expected H x W x 3 image");
  if (mask.rank() != 3 || mask.dim(0) != image.dim(0) || mask.dim(1) != image.dim(1)) {
    throw ConfigError("boundary_overlay: mask " + shape_str(mask.shape()) + " does not match image " +
                      shape_str(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1);
  Raster r{h, w, 3, std::vector<std::uint8_t>(h * w * 3)};
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
  }
  auto on = [&](long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return false;
    return mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) > 0.5;
  };
  for (long y = 0; y < static_cast<long>(h); ++y) {
    for (long x = 0; x < static_cast<long>(w); ++x) {
      if (on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))) {
        r.at(y, x, 0) = 255;
        r.at(y, x, 1) = 0;
        r.at(y, x, 2) = 0;
      }
    }
  }
  return r;
}

void write_pnm(const std::filesystem::path& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw ConfigError("write_pnm: 1 or 3 channels required");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << (r.channels == 1 ? "P5" : "P6") << '\n' << r.width << ' ' << r.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

Raster read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  std::size_t maxval = 0;
  Raster r;
  is >> magic >> r.width >> r.height >> maxval;
  if (!is || (magic != "P5" && magic != "P6") || maxval != 255) throw DataError(path.string() + ": unsupported PNM header");
  is.get();
  r.channels = magic == "P5" ? 1 : 3;
  r.pixels.resize(r.width * r.height * r.channels);
  if (!is.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()))) {
    throw DataError(path.string() + ": truncated pixel data");
  }
  return r;
}

RenderedFiles render_sample(const Model& model, const Sample& sample, const std::filesystem::path& dir,
                            const std::string& stem) {
  NoGradGuard no_grad;
  const PredictionPair pred = model.forward(sample.image, sample.tokens);
  const ModelConfig& cfg = model.config();
  const Tensor mask = binarize(pred.pixel_logits);
  RenderedFiles files{dir / (stem + "_mask.pgm"), dir / (stem + "_patch.pgm"), dir / (stem + "_overlay.ppm")};
  write_pnm(files.mask, mask_raster(mask));
  write_pnm(files.patches, patch_raster(pred.patch_probs, cfg.grid_h(), cfg.grid_w(), cfg.patch_size));
  write_pnm(files.overlay, boundary_overlay(sample.image, mask));
  return files;
}

}  // namespace restr
