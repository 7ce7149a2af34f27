#pragma once

// Raw compute kernels behind the differentiable ops.
//
// glims::kernels holds the OpenMP versions used by the library. Work is split
// so that every output element is produced by exactly one thread with a fixed
// summation order, which makes results identical for any thread count.
// glims::reference holds direct serial transcriptions of the definitions; they
// exist for tests and benchmarks only.

#include <array>
#include <cstdint>

namespace glims {

/// Geometry of a 3-D convolution over [N, C, D, H, W] volumes with a cubic
/// kernel. Weights are laid out [out_channels, in_channels / groups, k, k, k].
struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t groups = 1;
  std::array<std::int64_t, 3> in_extent{1, 1, 1};
  std::array<std::int64_t, 3> out_extent{1, 1, 1};
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t dilation = 1;
  std::int64_t padding = 0;

  std::int64_t in_plane() const { return in_extent[0] * in_extent[1] * in_extent[2]; }
  std::int64_t out_plane() const { return out_extent[0] * out_extent[1] * out_extent[2]; }
};

/// Output extent of a convolution along one axis.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t dilation, std::int64_t padding);

/// Batched matrix product C[b] = op(A[b]) * op(B[b]) with op(A) of size m x k
/// and op(B) of size k x n. Transposed operands are stored as k x m and n x k.
struct GemmShape {
  std::int64_t batch = 1;
  std::int64_t m = 1;
  std::int64_t n = 1;
  std::int64_t k = 1;
  bool trans_a = false;
  bool trans_b = false;
};

namespace kernels {

template <class T>
void conv3d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeometry& g);
/// gx += d(y)/d(x)^T gy
template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gx, const ConvGeometry& g);
/// gw += d(y)/d(w)^T gy
template <class T>
void conv3d_backward_weight(const T* gy, const T* x, T* gw, const ConvGeometry& g);
template <class T>
void conv3d_backward_bias(const T* gy, T* gb, const ConvGeometry& g);

/// When accumulate is false, c is overwritten.
template <class T>
void gemm(const T* a, const T* b, T* c, const GemmShape& s, bool accumulate);

/// Standardizes each of `planes` contiguous planes; stores per-plane mean and
/// reciprocal standard deviation.
template <class T>
void instance_norm_forward(const T* x, T* y, T* mean, T* rstd, std::int64_t planes,
                           std::int64_t plane_size, double eps);
template <class T>
void instance_norm_backward(const T* gy, const T* y, const T* rstd, T* gx, std::int64_t planes,
                            std::int64_t plane_size);

/// Normalizes rows of length `width`; y = xhat * gamma + beta.
template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* xhat, T* rstd,
                        std::int64_t rows, std::int64_t width, double eps);
template <class T>
void layer_norm_backward(const T* gy, const T* xhat, const T* rstd, const T* gamma, T* gx,
                         T* ggamma, T* gbeta, std::int64_t rows, std::int64_t width);

/// Softmax along the middle axis of an [outer, axis, inner] view.
template <class T>
void softmax_forward(const T* x, T* y, std::int64_t outer, std::int64_t axis,
                     std::int64_t inner);
template <class T>
void softmax_backward(const T* gy, const T* y, T* gx, std::int64_t outer, std::int64_t axis,
                      std::int64_t inner);

}  // namespace kernels

namespace reference {

template <class T>
void conv3d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeometry& g);
template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gx, const ConvGeometry& g);
template <class T>
void conv3d_backward_weight(const T* gy, const T* x, T* gw, const ConvGeometry& g);
template <class T>
void gemm(const T* a, const T* b, T* c, const GemmShape& s, bool accumulate);
template <class T>
void instance_norm_forward(const T* x, T* y, std::int64_t planes, std::int64_t plane_size,
                           double eps);
template <class T>
void softmax_forward(const T* x, T* y, std::int64_t outer, std::int64_t axis,
                     std::int64_t inner);

}  // namespace reference

/// Sets the OpenMP thread count for subsequent kernels (no-op without OpenMP).
void set_num_threads(int threads);
int num_threads();

}  // namespace glims
