#pragma once

// 3-D (shifted) window self-attention. Token grids are channels-last:
// [N, D, H, W, C].

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "glims/init.hpp"
#include "glims/tensor.hpp"

namespace glims {

using Extent3 = std::array<std::int64_t, 3>;

/// Window extent per axis: min(window, grid extent).
Extent3 effective_window(const Extent3& grid, std::int64_t window);
/// Per-axis shift for shifted blocks: floor(window / 2).
Extent3 shift_for(const Extent3& window);

/// [N, D, H, W, C] with D, H, W multiples of the window -> [N * nW, Md*Mh*Mw, C].
Tensor partition_windows(const Tensor& x, const Extent3& window);
/// Inverse of partition_windows for a grid of the given (padded) extents.
Tensor merge_windows(const Tensor& windows, std::int64_t batch, const Extent3& grid, const Extent3& window);

/// Channels-first convenience forms: zero-pads [N, C, D, H, W] to multiples of
/// M, and reverses with a crop back to the original extents.
Tensor window_partition(const Tensor& x, std::int64_t window);
Tensor window_reverse(const Tensor& windows, const Shape& original, std::int64_t window);

/// Torus roll of the three grid axes of a channels-last tensor.
Tensor cyclic_shift(const Tensor& x, const Extent3& shift);
Tensor cyclic_unshift(const Tensor& x, const Extent3& shift);

/// Region id of every voxel of a padded grid after a cyclic shift by -shift:
/// along each axis [0, P - M), [P - M, P - s) and [P - s, P) are distinct.
std::vector<int> shift_regions(const Extent3& grid, const Extent3& window, const Extent3& shift);
/// Additive mask [nW, L, L]: 0 within a region, -1e9 across regions.
Tensor shifted_window_mask(const Extent3& grid, const Extent3& window, const Extent3& shift, DType dtype);

struct WindowAttention {
  std::int64_t dim = 0;
  std::int64_t heads = 1;
  Tensor qkv_weight;   // [3C, C]
  Tensor qkv_bias;     // [3C]
  Tensor proj_weight;  // [C, C]
  Tensor proj_bias;    // [C]

  static WindowAttention make(Initializer& init, std::int64_t dim, std::int64_t heads);
  /// tokens [B, L, C] with B = N * nW; mask [nW, L, L] or undefined.
  Tensor forward(const Tensor& tokens, const Tensor& mask) const;
  /// Post-softmax attention weights [B, heads, L, L] (no gradient recording).
  Tensor attention_weights(const Tensor& tokens, const Tensor& mask) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// One transformer block: LN, (S)W-MSA, residual, LN, MLP, residual.
struct SwinBlock {
  std::int64_t dim = 0;
  bool shifted = false;
  Tensor norm1_gamma, norm1_beta;
  WindowAttention attention;
  Tensor norm2_gamma, norm2_beta;
  Tensor fc1_weight, fc1_bias;  // [hidden, C]
  Tensor fc2_weight, fc2_bias;  // [C, hidden]

  static SwinBlock make(Initializer& init, std::int64_t dim, std::int64_t heads, double mlp_ratio, bool shifted);
  Tensor forward(const Tensor& x, std::int64_t window) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Learnable positional embedding followed by blocks alternating regular and
/// shifted windows.
struct SwinStage {
  Tensor position;  // [D, H, W, C]
  std::vector<SwinBlock> blocks;
  std::int64_t window = 7;

  static SwinStage make(Initializer& init, std::int64_t dim, const Extent3& grid, std::int64_t depth,
                        std::int64_t heads, double mlp_ratio, std::int64_t window);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// [N, D, H, W, C] -> [N, D/2, H/2, W/2, 2C]: gather 2x2x2 neighbours, project 8C -> 2C.
struct PatchMerge {
  std::int64_t dim = 0;
  Tensor weight;  // [2C, 8C]
  Tensor bias;    // [2C]

  static PatchMerge make(Initializer& init, std::int64_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// [N, D, H, W, C] -> [N, 2D, 2H, 2W, C/2]: project C -> 4C, scatter to 2x2x2.
struct PatchExpand {
  std::int64_t dim = 0;
  Tensor weight;  // [4C, C]
  Tensor bias;    // [4C]

  static PatchExpand make(Initializer& init, std::int64_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Layout conversions between [N, C, D, H, W] and [N, D, H, W, C].
Tensor to_channels_last(const Tensor& x);
Tensor to_channels_first(const Tensor& x);

}  // namespace glims
