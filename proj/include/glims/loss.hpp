#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

/// Integer class ids laid out [N, D, H, W].
struct LabelMap {
  Shape shape;
  std::vector<std::uint8_t> ids;

  std::int64_t voxels() const { return shape_numel(shape); }
};

/// Nearest-neighbour downsampling by an integer factor per spatial axis; output
/// voxel i takes input voxel i * factor + (factor - 1) / 2.
LabelMap downsample_labels(const LabelMap& labels, std::int64_t factor);

/// Constant one-hot tensor [N, K, D, H, W].
Tensor one_hot(const LabelMap& labels, std::int64_t num_classes, DType dtype);

struct LossOptions {
  double eps = 1e-5;
  /// Divide the cross-entropy double sum by the voxel count.
  bool normalize_ce = true;
  /// Drop the cross-entropy term.
  bool dice_only = false;
};

struct LossValue {
  Tensor loss;
  double dice = 0;
  double ce = 0;
};

/// Dice (squared denominators) plus cross-entropy on softmax probabilities.
LossValue dice_ce_loss(const Tensor& logits, const LabelMap& labels, const LossOptions& opt = {});

struct LossReport {
  double total = 0;
  std::vector<double> per_level;
  /// Weighted sums over levels of the two terms.
  double dice_term = 0;
  double ce_term = 0;
};

/// 1, 1/2, 1/4, ... for the given number of levels.
std::vector<double> deep_supervision_weights(std::size_t levels);

/// Weighted sum of per-level loss values.
double weighted_total(std::span<const double> per_level);

/// levels[0] is full resolution and levels[i] is at 1 / 2^i of the label
/// extents; targets for coarser levels come from downsample_labels.
Tensor deep_supervision_loss(std::span<const Tensor> levels, const LabelMap& labels, LossReport& report,
                             const LossOptions& opt = {});

}  // namespace glims
