#include "glims/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace glims {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                             std::int64_t dilation, std::int64_t padding) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace kernels {
namespace {

// Output positions o in [lo, hi) whose tap o * stride + offset lands in [0, in).
struct Range {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
};

Range valid_range(std::int64_t offset, std::int64_t stride, std::int64_t in, std::int64_t out) {
  Range r;
  r.lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const std::int64_t last = in - 1 - offset;
  r.hi = last < 0 ? 0 : std::min(out, last / stride + 1);
  if (r.lo > r.hi) r.lo = r.hi;
  return r;
}

// y[i] += a * x[i * stride + offset] for i in [lo, hi)
template <class T>
inline void axpy_strided(T* y, const T* x, std::int64_t offset, T a, std::int64_t lo,
                         std::int64_t hi, std::int64_t stride) {
  if (stride == 1) {
    const T* xs = x + offset + lo;
    T* ys = y + lo;
    const std::int64_t n = hi - lo;
    for (std::int64_t i = 0; i < n; ++i) ys[i] += a * xs[i];
  } else {
    for (std::int64_t i = lo; i < hi; ++i) y[i] += a * x[i * stride + offset];
  }
}

}  // namespace

template <class T>
void conv3d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const std::int64_t K3 = K * K * K;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  const std::int64_t in_plane = g.in_plane();
  const std::int64_t out_plane = g.out_plane();
  const std::int64_t s = g.stride;

#pragma omp parallel for schedule(static)
  for (std::int64_t idx = 0; idx < g.batch * g.out_channels; ++idx) {
    const std::int64_t n = idx / g.out_channels;
    const std::int64_t co = idx % g.out_channels;
    const std::int64_t grp = co / cout_g;
    T* yp = y + idx * out_plane;
    std::fill(yp, yp + out_plane, bias ? bias[co] : T(0));
    for (std::int64_t oz = 0; oz < OD; ++oz) {
      T* yslab = yp + oz * OH * OW;
      for (std::int64_t cl = 0; cl < cin_g; ++cl) {
        const T* xp = x + (n * g.in_channels + grp * cin_g + cl) * in_plane;
        const T* wp = w + (co * cin_g + cl) * K3;
        for (std::int64_t kz = 0; kz < K; ++kz) {
          const std::int64_t iz = oz * s + kz * g.dilation - g.padding;
          if (iz < 0 || iz >= ID) continue;
          for (std::int64_t ky = 0; ky < K; ++ky) {
            const std::int64_t offy = ky * g.dilation - g.padding;
            const Range ry = valid_range(offy, s, IH, OH);
            for (std::int64_t kx = 0; kx < K; ++kx) {
              const std::int64_t offx = kx * g.dilation - g.padding;
              const Range rx = valid_range(offx, s, IW, OW);
              const T wv = wp[(kz * K + ky) * K + kx];
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                const std::int64_t iy = oy * s + offy;
                axpy_strided(yslab + oy * OW, xp + (iz * IH + iy) * IW, offx, wv, rx.lo, rx.hi, s);
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gx, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const std::int64_t K3 = K * K * K;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  const std::int64_t in_plane = g.in_plane();
  const std::int64_t out_plane = g.out_plane();
  const std::int64_t s = g.stride;

#pragma omp parallel for schedule(static)
  for (std::int64_t idx = 0; idx < g.batch * g.in_channels; ++idx) {
    const std::int64_t n = idx / g.in_channels;
    const std::int64_t ci = idx % g.in_channels;
    const std::int64_t grp = ci / cin_g;
    const std::int64_t cl = ci % cin_g;
    T* gxp = gx + idx * in_plane;
    for (std::int64_t iz = 0; iz < ID; ++iz) {
      T* gxslab = gxp + iz * IH * IW;
      for (std::int64_t col = 0; col < cout_g; ++col) {
        const std::int64_t co = grp * cout_g + col;
        const T* gyp = gy + (n * g.out_channels + co) * out_plane;
        const T* wp = w + (co * cin_g + cl) * K3;
        for (std::int64_t kz = 0; kz < K; ++kz) {
          const std::int64_t t = iz + g.padding - kz * g.dilation;
          if (t < 0 || t % s != 0) continue;
          const std::int64_t oz = t / s;
          if (oz >= OD) continue;
          for (std::int64_t ky = 0; ky < K; ++ky) {
            const std::int64_t offy = ky * g.dilation - g.padding;
            const Range ry = valid_range(offy, s, IH, OH);
            for (std::int64_t kx = 0; kx < K; ++kx) {
              const std::int64_t offx = kx * g.dilation - g.padding;
              const Range rx = valid_range(offx, s, IW, OW);
              const T wv = wp[(kz * K + ky) * K + kx];
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                const std::int64_t iy = oy * s + offy;
                T* gxrow = gxslab + iy * IW;
                const T* gyrow = gyp + (oz * OH + oy) * OW;
                if (s == 1) {
                  T* gs = gxrow + offx + rx.lo;
                  const T* ys = gyrow + rx.lo;
                  for (std::int64_t i = 0; i < rx.hi - rx.lo; ++i) gs[i] += wv * ys[i];
                } else {
                  for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox)
                    gxrow[ox * s + offx] += wv * gyrow[ox];
                }
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv3d_backward_weight(const T* gy, const T* x, T* gw, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const std::int64_t K3 = K * K * K;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  const std::int64_t in_plane = g.in_plane();
  const std::int64_t out_plane = g.out_plane();
  const std::int64_t s = g.stride;

#pragma omp parallel for schedule(static)
  for (std::int64_t idx = 0; idx < g.out_channels * cin_g; ++idx) {
    const std::int64_t co = idx / cin_g;
    const std::int64_t cl = idx % cin_g;
    const std::int64_t ci = (co / cout_g) * cin_g + cl;
    T* gwp = gw + idx * K3;
    for (std::int64_t kz = 0; kz < K; ++kz) {
      const std::int64_t offz = kz * g.dilation - g.padding;
      const Range rz = valid_range(offz, s, ID, OD);
      for (std::int64_t ky = 0; ky < K; ++ky) {
        const std::int64_t offy = ky * g.dilation - g.padding;
        const Range ry = valid_range(offy, s, IH, OH);
        for (std::int64_t kx = 0; kx < K; ++kx) {
          const std::int64_t offx = kx * g.dilation - g.padding;
          const Range rx = valid_range(offx, s, IW, OW);
          T acc = 0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const T* gyp = gy + (n * g.out_channels + co) * out_plane;
            const T* xp = x + (n * g.in_channels + ci) * in_plane;
            for (std::int64_t oz = rz.lo; oz < rz.hi; ++oz) {
              const std::int64_t iz = oz * s + offz;
              for (std::int64_t oy = ry.lo; oy < ry.hi; ++oy) {
                const std::int64_t iy = oy * s + offy;
                const T* gyrow = gyp + (oz * OH + oy) * OW;
                const T* xrow = xp + (iz * IH + iy) * IW;
                T row = 0;
                if (s == 1) {
                  const T* xs = xrow + offx + rx.lo;
                  const T* gs = gyrow + rx.lo;
                  for (std::int64_t i = 0; i < rx.hi - rx.lo; ++i) row += gs[i] * xs[i];
                } else {
                  for (std::int64_t ox = rx.lo; ox < rx.hi; ++ox)
                    row += gyrow[ox] * xrow[ox * s + offx];
                }
                acc += row;
              }
            }
          }
          gwp[(kz * K + ky) * K + kx] += acc;
        }
      }
    }
  }
}

template <class T>
void conv3d_backward_bias(const T* gy, T* gb, const ConvGeometry& g) {
  const std::int64_t out_plane = g.out_plane();
#pragma omp parallel for schedule(static)
  for (std::int64_t co = 0; co < g.out_channels; ++co) {
    T acc = 0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const T* p = gy + (n * g.out_channels + co) * out_plane;
      T plane = 0;
      for (std::int64_t i = 0; i < out_plane; ++i) plane += p[i];
      acc += plane;
    }
    gb[co] += acc;
  }
}

template <class T>
void gemm(const T* a, const T* b, T* c, const GemmShape& s, bool accumulate) {
  const std::int64_t M = s.m, N = s.n, K = s.k;
  // Rows of op(B) are made contiguous so every row of C is a sequence of axpys.
  std::vector<T> bt;
  if (s.trans_b) {
    bt.resize(static_cast<std::size_t>(s.batch * K * N));
#pragma omp parallel for schedule(static)
    for (std::int64_t bi = 0; bi < s.batch; ++bi)
      for (std::int64_t j = 0; j < N; ++j)
        for (std::int64_t k = 0; k < K; ++k) bt[static_cast<std::size_t>((bi * K + k) * N + j)] = b[(bi * N + j) * K + k];
    b = bt.data();
  }
#pragma omp parallel
  {
    std::vector<T> arow(static_cast<std::size_t>(K));
#pragma omp for schedule(static)
    for (std::int64_t r = 0; r < s.batch * M; ++r) {
      const std::int64_t bi = r / M;
      const std::int64_t i = r % M;
      const T* ab = a + bi * M * K;
      const T* bb = b + bi * K * N;
      T* crow = c + r * N;
      if (!accumulate) std::fill(crow, crow + N, T(0));
      const T* ar;
      if (s.trans_a) {
        for (std::int64_t k = 0; k < K; ++k) arow[static_cast<std::size_t>(k)] = ab[k * M + i];
        ar = arow.data();
      } else {
        ar = ab + i * K;
      }
      for (std::int64_t k = 0; k < K; ++k) {
        const T av = ar[k];
        const T* brow = bb + k * N;
#pragma omp simd
        for (std::int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T>
void instance_norm_forward(const T* x, T* y, T* mean, T* rstd, std::int64_t planes,
                           std::int64_t plane_size, double eps) {
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x + p * plane_size;
    T* yp = y + p * plane_size;
    double sum = 0;
    for (std::int64_t i = 0; i < plane_size; ++i) sum += xp[i];
    const double mu = sum / static_cast<double>(plane_size);
    double sq = 0;
    for (std::int64_t i = 0; i < plane_size; ++i) {
      const double d = xp[i] - mu;
      sq += d * d;
    }
    const double r = 1.0 / std::sqrt(sq / static_cast<double>(plane_size) + eps);
    const T mu_t = static_cast<T>(mu);
    const T r_t = static_cast<T>(r);
    for (std::int64_t i = 0; i < plane_size; ++i) yp[i] = (xp[i] - mu_t) * r_t;
    mean[p] = mu_t;
    rstd[p] = r_t;
  }
}

template <class T>
void instance_norm_backward(const T* gy, const T* y, const T* rstd, T* gx, std::int64_t planes,
                            std::int64_t plane_size) {
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* gyp = gy + p * plane_size;
    const T* yp = y + p * plane_size;
    T* gxp = gx + p * plane_size;
    double sg = 0, sgy = 0;
    for (std::int64_t i = 0; i < plane_size; ++i) {
      sg += gyp[i];
      sgy += static_cast<double>(gyp[i]) * yp[i];
    }
    const T mg = static_cast<T>(sg / static_cast<double>(plane_size));
    const T mgy = static_cast<T>(sgy / static_cast<double>(plane_size));
    const T r = rstd[p];
    for (std::int64_t i = 0; i < plane_size; ++i) gxp[i] += r * (gyp[i] - mg - yp[i] * mgy);
  }
}

template <class T>
void layer_norm_forward(const T* x, const T* gamma, const T* beta, T* y, T* xhat, T* rstd,
                        std::int64_t rows, std::int64_t width, double eps) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x + r * width;
    T* yr = y + r * width;
    T* hr = xhat + r * width;
    double sum = 0;
    for (std::int64_t i = 0; i < width; ++i) sum += xr[i];
    const double mu = sum / static_cast<double>(width);
    double sq = 0;
    for (std::int64_t i = 0; i < width; ++i) {
      const double d = xr[i] - mu;
      sq += d * d;
    }
    const T rs = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(width) + eps));
    const T mu_t = static_cast<T>(mu);
    for (std::int64_t i = 0; i < width; ++i) {
      hr[i] = (xr[i] - mu_t) * rs;
      yr[i] = hr[i] * gamma[i] + beta[i];
    }
    rstd[r] = rs;
  }
}

template <class T>
void layer_norm_backward(const T* gy, const T* xhat, const T* rstd, const T* gamma, T* gx,
                         T* ggamma, T* gbeta, std::int64_t rows, std::int64_t width) {
  if (gx) {
#pragma omp parallel
    {
      std::vector<T> gh(static_cast<std::size_t>(width));
#pragma omp for schedule(static)
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* gyr = gy + r * width;
        const T* hr = xhat + r * width;
        double s1 = 0, s2 = 0;
        for (std::int64_t i = 0; i < width; ++i) {
          gh[static_cast<std::size_t>(i)] = gyr[i] * gamma[i];
          s1 += gh[static_cast<std::size_t>(i)];
          s2 += static_cast<double>(gh[static_cast<std::size_t>(i)]) * hr[i];
        }
        const T m1 = static_cast<T>(s1 / static_cast<double>(width));
        const T m2 = static_cast<T>(s2 / static_cast<double>(width));
        T* gxr = gx + r * width;
        for (std::int64_t i = 0; i < width; ++i)
          gxr[i] += rstd[r] * (gh[static_cast<std::size_t>(i)] - m1 - hr[i] * m2);
      }
    }
  }
  if (ggamma || gbeta) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < width; ++i) {
      T sg = 0, sb = 0;
      for (std::int64_t r = 0; r < rows; ++r) {
        sg += gy[r * width + i] * xhat[r * width + i];
        sb += gy[r * width + i];
      }
      if (ggamma) ggamma[i] += sg;
      if (gbeta) gbeta[i] += sb;
    }
  }
}

template <class T>
void softmax_forward(const T* x, T* y, std::int64_t outer, std::int64_t axis,
                     std::int64_t inner) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < outer * inner; ++r) {
    const std::int64_t o = r / inner;
    const std::int64_t in = r % inner;
    const T* xp = x + o * axis * inner + in;
    T* yp = y + o * axis * inner + in;
    T mx = xp[0];
    for (std::int64_t a = 1; a < axis; ++a) mx = std::max(mx, xp[a * inner]);
    T sum = 0;
    for (std::int64_t a = 0; a < axis; ++a) {
      yp[a * inner] = std::exp(xp[a * inner] - mx);
      sum += yp[a * inner];
    }
    const T inv = T(1) / sum;
    for (std::int64_t a = 0; a < axis; ++a) yp[a * inner] *= inv;
  }
}

template <class T>
void softmax_backward(const T* gy, const T* y, T* gx, std::int64_t outer, std::int64_t axis,
                      std::int64_t inner) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < outer * inner; ++r) {
    const std::int64_t base = (r / inner) * axis * inner + r % inner;
    T dot = 0;
    for (std::int64_t a = 0; a < axis; ++a) dot += gy[base + a * inner] * y[base + a * inner];
    for (std::int64_t a = 0; a < axis; ++a)
      gx[base + a * inner] += y[base + a * inner] * (gy[base + a * inner] - dot);
  }
}

#define GLIMS_INSTANTIATE(T)                                                                  \
  template void conv3d_forward<T>(const T*, const T*, const T*, T*, const ConvGeometry&);     \
  template void conv3d_backward_input<T>(const T*, const T*, T*, const ConvGeometry&);        \
  template void conv3d_backward_weight<T>(const T*, const T*, T*, const ConvGeometry&);       \
  template void conv3d_backward_bias<T>(const T*, T*, const ConvGeometry&);                   \
  template void gemm<T>(const T*, const T*, T*, const GemmShape&, bool);                      \
  template void instance_norm_forward<T>(const T*, T*, T*, T*, std::int64_t, std::int64_t,    \
                                         double);                                             \
  template void instance_norm_backward<T>(const T*, const T*, const T*, T*, std::int64_t,     \
                                          std::int64_t);                                      \
  template void layer_norm_forward<T>(const T*, const T*, const T*, T*, T*, T*, std::int64_t, \
                                      std::int64_t, double);                                  \
  template void layer_norm_backward<T>(const T*, const T*, const T*, const T*, T*, T*, T*,    \
                                       std::int64_t, std::int64_t);                           \
  template void softmax_forward<T>(const T*, T*, std::int64_t, std::int64_t, std::int64_t);   \
  template void softmax_backward<T>(const T*, const T*, T*, std::int64_t, std::int64_t,       \
                                    std::int64_t);

GLIMS_INSTANTIATE(float)
GLIMS_INSTANTIATE(double)
#undef GLIMS_INSTANTIATE

}  // namespace kernels
}  // namespace glims
