#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace glims {

using Grid3 = std::array<std::int64_t, 3>;
using Spacing3 = std::array<double, 3>;

/// 2|A and B| / (|A| + |B|); 1 when both are empty.
double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

/// Flat indices of foreground voxels with at least one 6-connected background
/// neighbour; voxels on the volume faces always qualify.
std::vector<std::int64_t> boundary_voxels(std::span<const std::uint8_t> mask, const Grid3& extent);

/// Squared spacing-scaled distance from every voxel to the nearest marked voxel
/// (infinity when nothing is marked). Separable exact transform.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> marked, const Grid3& extent,
                                               const Spacing3& spacing);

/// Nearest-rank percentile: the ceil(q * n)-th smallest value.
double nearest_rank_percentile(std::vector<double> values, double q);

/// Max of the two directed 95th-percentile boundary distances; empty when
/// either mask is empty.
std::optional<double> hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Grid3& extent,
                           const Spacing3& spacing = {1, 1, 1});

struct ClassMetrics {
  int label = 0;
  std::string name;
  double dsc_percent = 0;
  std::optional<double> hd95;
};

struct MetricsReport {
  std::vector<ClassMetrics> classes;
  double mean_dsc_percent = 0;
  /// Mean over classes with a defined HD95.
  std::optional<double> mean_hd95;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Per-class metrics for foreground classes 1..num_classes-1 of one case.
MetricsReport evaluate_labels(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                              const Grid3& extent, int num_classes, const Spacing3& spacing = {1, 1, 1});

/// Per-class averages over cases (HD95 over the cases where it is defined).
MetricsReport average_reports(std::span<const MetricsReport> cases);

}  // namespace glims
