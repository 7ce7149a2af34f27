// Serial, definition-level kernels. Deliberately naive: every output element is
// a direct sum over its support with explicit bounds checks.

#include <cmath>

#include "glims/kernels.hpp"

namespace glims::reference {

template <class T>
void conv3d_forward(const T* x, const T* w, const T* bias, T* y, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t oz = 0; oz < OD; ++oz)
        for (std::int64_t oy = 0; oy < OH; ++oy)
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            T acc = bias ? bias[co] : T(0);
            for (std::int64_t cl = 0; cl < cin_g; ++cl) {
              const std::int64_t ci = (co / cout_g) * cin_g + cl;
              for (std::int64_t kz = 0; kz < K; ++kz)
                for (std::int64_t ky = 0; ky < K; ++ky)
                  for (std::int64_t kx = 0; kx < K; ++kx) {
                    const std::int64_t iz = oz * g.stride + kz * g.dilation - g.padding;
                    const std::int64_t iy = oy * g.stride + ky * g.dilation - g.padding;
                    const std::int64_t ix = ox * g.stride + kx * g.dilation - g.padding;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= ID || iy >= IH || ix >= IW) continue;
                    acc += w[(((co * cin_g + cl) * K + kz) * K + ky) * K + kx] *
                           x[(((n * g.in_channels + ci) * ID + iz) * IH + iy) * IW + ix];
                  }
            }
            y[(((n * g.out_channels + co) * OD + oz) * OH + oy) * OW + ox] = acc;
          }
}

template <class T>
void conv3d_backward_input(const T* gy, const T* w, T* gx, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t oz = 0; oz < OD; ++oz)
        for (std::int64_t oy = 0; oy < OH; ++oy)
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const T go = gy[(((n * g.out_channels + co) * OD + oz) * OH + oy) * OW + ox];
            for (std::int64_t cl = 0; cl < cin_g; ++cl) {
              const std::int64_t ci = (co / cout_g) * cin_g + cl;
              for (std::int64_t kz = 0; kz < K; ++kz)
                for (std::int64_t ky = 0; ky < K; ++ky)
                  for (std::int64_t kx = 0; kx < K; ++kx) {
                    const std::int64_t iz = oz * g.stride + kz * g.dilation - g.padding;
                    const std::int64_t iy = oy * g.stride + ky * g.dilation - g.padding;
                    const std::int64_t ix = ox * g.stride + kx * g.dilation - g.padding;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= ID || iy >= IH || ix >= IW) continue;
                    gx[(((n * g.in_channels + ci) * ID + iz) * IH + iy) * IW + ix] +=
                        w[(((co * cin_g + cl) * K + kz) * K + ky) * K + kx] * go;
                  }
            }
          }
}

template <class T>
void conv3d_backward_weight(const T* gy, const T* x, T* gw, const ConvGeometry& g) {
  const std::int64_t cin_g = g.in_channels / g.groups;
  const std::int64_t cout_g = g.out_channels / g.groups;
  const std::int64_t K = g.kernel;
  const auto [ID, IH, IW] = g.in_extent;
  const auto [OD, OH, OW] = g.out_extent;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t co = 0; co < g.out_channels; ++co)
      for (std::int64_t oz = 0; oz < OD; ++oz)
        for (std::int64_t oy = 0; oy < OH; ++oy)
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            const T go = gy[(((n * g.out_channels + co) * OD + oz) * OH + oy) * OW + ox];
            for (std::int64_t cl = 0; cl < cin_g; ++cl) {
              const std::int64_t ci = (co / cout_g) * cin_g + cl;
              for (std::int64_t kz = 0; kz < K; ++kz)
                for (std::int64_t ky = 0; ky < K; ++ky)
                  for (std::int64_t kx = 0; kx < K; ++kx) {
                    const std::int64_t iz = oz * g.stride + kz * g.dilation - g.padding;
                    const std::int64_t iy = oy * g.stride + ky * g.dilation - g.padding;
                    const std::int64_t ix = ox * g.stride + kx * g.dilation - g.padding;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= ID || iy >= IH || ix >= IW) continue;
                    gw[(((co * cin_g + cl) * K + kz) * K + ky) * K + kx] +=
                        go * x[(((n * g.in_channels + ci) * ID + iz) * IH + iy) * IW + ix];
                  }
            }
          }
}

template <class T>
void gemm(const T* a, const T* b, T* c, const GemmShape& s, bool accumulate) {
  for (std::int64_t bi = 0; bi < s.batch; ++bi)
    for (std::int64_t i = 0; i < s.m; ++i)
      for (std::int64_t j = 0; j < s.n; ++j) {
        T acc = 0;
        for (std::int64_t k = 0; k < s.k; ++k) {
          const T av = s.trans_a ? a[bi * s.m * s.k + k * s.m + i] : a[bi * s.m * s.k + i * s.k + k];
          const T bv = s.trans_b ? b[bi * s.k * s.n + j * s.k + k] : b[bi * s.k * s.n + k * s.n + j];
          acc += av * bv;
        }
        T& out = c[(bi * s.m + i) * s.n + j];
        out = accumulate ? out + acc : acc;
      }
}

template <class T>
void instance_norm_forward(const T* x, T* y, std::int64_t planes, std::int64_t plane_size,
                           double eps) {
  for (std::int64_t p = 0; p < planes; ++p) {
    double mean = 0;
    for (std::int64_t i = 0; i < plane_size; ++i) mean += x[p * plane_size + i];
    mean /= static_cast<double>(plane_size);
    double var = 0;
    for (std::int64_t i = 0; i < plane_size; ++i) {
      const double d = x[p * plane_size + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(plane_size);
    for (std::int64_t i = 0; i < plane_size; ++i)
      y[p * plane_size + i] = static_cast<T>((x[p * plane_size + i] - mean) / std::sqrt(var + eps));
  }
}

template <class T>
void softmax_forward(const T* x, T* y, std::int64_t outer, std::int64_t axis,
                     std::int64_t inner) {
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t in = 0; in < inner; ++in) {
      double sum = 0;
      for (std::int64_t a = 0; a < axis; ++a) sum += std::exp(static_cast<double>(x[(o * axis + a) * inner + in]));
      for (std::int64_t a = 0; a < axis; ++a)
        y[(o * axis + a) * inner + in] =
            static_cast<T>(std::exp(static_cast<double>(x[(o * axis + a) * inner + in])) / sum);
    }
}

#define GLIMS_INSTANTIATE(T)                                                                   \
  template void conv3d_forward<T>(const T*, const T*, const T*, T*, const ConvGeometry&);      \
  template void conv3d_backward_input<T>(const T*, const T*, T*, const ConvGeometry&);         \
  template void conv3d_backward_weight<T>(const T*, const T*, T*, const ConvGeometry&);        \
  template void gemm<T>(const T*, const T*, T*, const GemmShape&, bool);                       \
  template void instance_norm_forward<T>(const T*, T*, std::int64_t, std::int64_t, double);    \
  template void softmax_forward<T>(const T*, T*, std::int64_t, std::int64_t, std::int64_t);

GLIMS_INSTANTIATE(float)
GLIMS_INSTANTIATE(double)
#undef GLIMS_INSTANTIATE

}  // namespace glims::reference
