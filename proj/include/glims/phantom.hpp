#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "glims/volume.hpp"

namespace glims {

/// Nested ellipsoid phantom. Region k (k = 1..num_classes-1) is an
/// axis-aligned ellipsoid strictly inside region k-1; label k marks voxels in
/// region k but not in region k+1.
struct PhantomSpec {
  std::uint64_t seed = 0;
  Extent extent{64, 64, 64};
  int num_classes = 4;
  std::int64_t channels = 4;
  /// Outermost semi-axes as fractions of the extent.
  std::pair<double, double> outer_radius{0.22, 0.34};
  /// Each inner semi-axis as a fraction of the enclosing one.
  std::pair<double, double> inner_scale{0.55, 0.75};
  /// Centre offset of an inner region, as a fraction of the room left inside
  /// its parent.
  double center_jitter = 0.5;
  /// Mean intensity of class k in channel c is class_mean * k * (1 + channel_step * c)
  /// plus channel_offset * c.
  double class_mean = 1.0;
  double channel_step = 0.25;
  double channel_offset = 0.1;
  double noise_sigma = 0.1;

  void validate() const;
};

struct Ellipsoid {
  std::array<double, 3> center{};
  std::array<double, 3> semi_axes{};

  bool contains(double z, double y, double x) const;
  double volume() const;
};

struct Phantom {
  Volume image;
  LabelVolume labels;
  /// Region 1 first.
  std::vector<Ellipsoid> regions;
};

Phantom generate_phantom(const PhantomSpec& spec);

/// Mean intensity of a class in a channel under the spec.
double phantom_mean(const PhantomSpec& spec, int label, std::int64_t channel);

struct DatasetCase {
  std::string name;
  Volume image;
  LabelVolume labels;
};

struct Dataset {
  std::vector<DatasetCase> train;
  std::vector<DatasetCase> validation;
};

/// `count` phantoms with per-case seed = seed + index; the first
/// round(0.8 * count) (at least one) train, the rest validate.
Dataset make_phantom_dataset(const PhantomSpec& base, std::int64_t count, double train_fraction = 0.8);

/// Writes <dir>/<train|val>/<name>_image.glv and _label.glv plus
/// <dir>/dataset.json.
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace glims
