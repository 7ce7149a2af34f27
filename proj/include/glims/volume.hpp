#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

using Extent = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;

/// Multi-channel float image, channel-major [C, D, H, W].
struct Volume {
  std::int64_t channels = 1;
  Extent extent{1, 1, 1};
  Spacing spacing{1, 1, 1};
  std::vector<float> data;

  std::int64_t voxels() const { return extent[0] * extent[1] * extent[2]; }
  void validate() const;
  /// [1, C, D, H, W]
  Tensor to_tensor(DType dt = DType::f32) const;
};

struct LabelVolume {
  Extent extent{1, 1, 1};
  Spacing spacing{1, 1, 1};
  std::vector<std::uint8_t> ids;

  std::int64_t voxels() const { return extent[0] * extent[1] * extent[2]; }
  void validate(int num_classes) const;
};

// Read failures, one type per way a file can be wrong.
class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};
class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};
class TruncatedPayloadError : public IoError {
 public:
  using IoError::IoError;
};
class PayloadSizeError : public IoError {
 public:
  using IoError::IoError;
};

/// Size of the packed little-endian file header.
inline constexpr std::size_t kVolumeHeaderBytes = 39;

void write_volume(const std::filesystem::path& path, const Volume& v);
Volume read_volume(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelVolume& l);
LabelVolume read_labels(const std::filesystem::path& path);

struct Patch {
  Volume image;
  LabelVolume labels;
  Extent corner{0, 0, 0};
};

/// Uniformly random corner of a size^3 crop; volumes smaller than `size` along
/// an axis are mirror-padded first. Image and labels are cropped identically.
Patch sample_patch(const Volume& image, const LabelVolume& labels, std::int64_t size, std::mt19937_64& rng);

/// Reverses the selected spatial axes of a patch in place.
void flip_patch(Patch& p, const std::array<bool, 3>& axes);

}  // namespace glims
