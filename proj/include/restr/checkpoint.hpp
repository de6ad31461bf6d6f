#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>

#include "restr/model.hpp"
#include "restr/training.hpp"

namespace restr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerSnapshot {
  AdamWState state;
  std::size_t iteration = 0;  // last completed training iteration
};

struct LoadedCheckpoint {
  Model model;
  std::optional<OptimizerSnapshot> optimizer;
};

// Binary layout (little endian):
//   "RSTR" u32 version
//   u32 len, model config text (key = value lines)
//   u32 count, then per parameter: u32 len, name, u32 rank, u64 dims..., f32 values
//   u8 has_optimizer [u64 step, u64 iteration, per parameter f32 first, f32 second]
// Parameters are stored as 32 bit reals; a loaded model matches the saved one
// to within float rounding (relative error <= 2^-24).
void write_checkpoint(std::ostream& os, Model& model, const OptimizerSnapshot* optimizer = nullptr);
LoadedCheckpoint read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, Model& model, const OptimizerSnapshot* optimizer = nullptr);
// Throws DataError for missing files, bad magic, unknown versions, or
// parameters that do not match the stored config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace restr
