#pragma once

#include <cstdint>
#include <vector>

#include "glims/model.hpp"

namespace glims {

/// Window starts along one axis: 0, stride, 2*stride, ... below extent - patch,
/// then extent - patch, with stride = max(1, round(patch * (1 - overlap))).
std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap);

/// Mirror padding (edge voxel not repeated) of the spatial axes of
/// [N, C, D, H, W] up to at least `min_extent` each; padding goes after the
/// data so the original voxels keep their indices.
Tensor reflect_pad_to(const Tensor& x, std::int64_t min_extent);

/// Averages main-head logits of every window covering a voxel. x is
/// [1, C, D, H, W]; returns [1, K, D, H, W]. Runs without recording gradients.
Tensor sliding_window_infer(const GlimsModel& model, const Tensor& x, double overlap = 0.8);

/// Class index of the largest logit per voxel, [N, K, D, H, W] -> N*D*H*W ids.
std::vector<std::uint8_t> argmax_labels(const Tensor& logits);

}  // namespace glims
