#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "glims/model.hpp"
#include "glims/optim.hpp"

namespace glims {

struct CheckpointHeader {
  std::int64_t epoch = 0;
  double best_dsc = 0;
  std::uint64_t config_fingerprint = 0;
  /// Serialized generator state (std::mt19937_64 stream form).
  std::string rng_state;
  std::int64_t optimizer_steps = 0;
};

/// Writes `path` (text manifest) and `path` + ".bin" (little-endian f32 blob)
/// holding every parameter and, when given, the optimizer moments.
void save_checkpoint(const std::filesystem::path& path, const GlimsModel& model, const AdamW* optimizer,
                     CheckpointHeader header);

/// Reads only the manifest header.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Restores parameters (and moments when `optimizer` is given) in place.
/// Throws ConfigError when the stored fingerprint differs from the model's.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, GlimsModel& model, AdamW* optimizer);

}  // namespace glims
