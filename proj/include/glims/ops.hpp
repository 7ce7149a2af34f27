#pragma once

// Differentiable tensor operations. Every function records itself on the
// current thread's tape when gradient recording is enabled and at least one
// input requires a gradient.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

// Broadcasting binary ops. Shapes are right-aligned; extents must match or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor reciprocal(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);

/// Sum of all elements as a 0-d tensor.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::span<const int> axes, bool keepdim);
Tensor mean(const Tensor& x, std::span<const int> axes, bool keepdim);
/// Maximum over axes; the gradient goes to the first maximal element.
Tensor amax(const Tensor& x, std::span<const int> axes, bool keepdim);

/// Reductions with kept singleton axis.
Tensor max_over_axis(const Tensor& x, int axis);
Tensor mean_over_axis(const Tensor& x, int axis);
/// [N, C, D, H, W] -> [N, C, 1, 1, 1]
Tensor max_pool_global(const Tensor& x);
Tensor avg_pool_global(const Tensor& x);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
std::vector<Tensor> split(const Tensor& x, int axis, std::span<const std::int64_t> sizes);
Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const int> order);
Tensor permute(const Tensor& x, std::initializer_list<int> order);

/// Cyclic roll: out[i] = x[(i - shift) mod extent] per axis.
Tensor roll(const Tensor& x, std::span<const std::int64_t> shifts);

/// Zero padding with (before, after) per axis.
Tensor pad(const Tensor& x, std::span<const std::pair<std::int64_t, std::int64_t>> widths);
/// Box crop with per-axis start and extent.
Tensor crop(const Tensor& x, std::span<const std::int64_t> starts,
            std::span<const std::int64_t> extents);

/// Nearest-neighbour x2 upsampling of the last three axes.
Tensor upsample_nearest2(const Tensor& x);

/// Batched product over matching leading axes: [..., M, K] x [..., K, N].
/// Transposed operands are given as [..., K, M] and [..., N, K].
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

/// x [..., in] * w[out, in]^T + b[out]; b may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct Conv3dOptions {
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  std::int64_t padding = 0;
  std::int64_t groups = 1;
};

/// x [N, Cin, D, H, W], w [Cout, Cin / groups, k, k, k], b [Cout] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dOptions& opt);

/// Transposed convolution with stride equal to the kernel size.
/// x [N, Cin, D, H, W], w [Cin, Cout, k, k, k] -> [N, Cout, kD, kH, kW].
Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& b);

/// Per-(sample, channel) standardization over the spatial axes, no affine.
Tensor instance_norm(const Tensor& x, double eps = 1e-5);

/// Standardization over the last axis followed by gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace glims
