#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "restr/model.hpp"
#include "restr/synth.hpp"
#include "restr/tensor.hpp"

namespace restr {

// 8-bit raster, row-major, interleaved channels (1 or 3).
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// Binary H x W x 1 mask -> 0/255 gray.
Raster mask_raster(const Tensor& mask);
// Patch probabilities (N_v x 1) thresholded at 0.5 and repeated over P x P blocks.
Raster patch_raster(const Tensor& patch_probs, std::size_t grid_h, std::size_t grid_w, std::size_t patch);
// Input image with mask boundary pixels (mask pixels with a 4-neighbour
// outside the mask or on the border) painted red.
Raster boundary_overlay(const Tensor& image, const Tensor& mask);

// P5 for one channel, P6 for three, maxval 255.
void write_pnm(const std::filesystem::path& path, const Raster& r);
Raster read_pnm(const std::filesystem::path& path);

struct RenderedFiles {
  std::filesystem::path mask;
  std::filesystem::path patches;
  std::filesystem::path overlay;
};

// Writes <stem>_mask.pgm, <stem>_patch.pgm and <stem>_overlay.ppm into dir.
RenderedFiles render_sample(const Model& model, const Sample& sample, const std::filesystem::path& dir,
                            const std::string& stem);

}  // namespace restr
