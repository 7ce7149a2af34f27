#include "glims/inference.hpp"

#include <algorithm>
#include <cmath>

#include "glims/autograd.hpp"
#include "glims/ops.hpp"

namespace glims {

std::vector<std::int64_t> window_starts(std::int64_t extent, std::int64_t patch, double overlap) {
  if (patch < 1) throw ConfigError("window_starts: patch must be >= 1");
  if (extent < patch) throw ShapeError("window_starts: extent " + std::to_string(extent) + " smaller than patch " +
                                       std::to_string(patch));
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("window_starts: overlap must be in [0, 1)");
  const auto stride = std::max<std::int64_t>(1, std::llround(static_cast<double>(patch) * (1.0 - overlap)));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s < extent - patch; s += stride) starts.push_back(s);
  if (starts.empty() || starts.back() != extent - patch) starts.push_back(extent - patch);
  return starts;
}

Tensor reflect_pad_to(const Tensor& x, std::int64_t min_extent) {
  if (x.rank() != 5) throw ShapeError("reflect_pad_to: expected [N, C, D, H, W], got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  bool needed = false;
  for (int a = 2; a < 5; ++a)
    if (out_shape[static_cast<std::size_t>(a)] < min_extent) {
      out_shape[static_cast<std::size_t>(a)] = min_extent;
      needed = true;
    }
  if (!needed) return x;
  auto mirror = [](std::int64_t i, std::int64_t n) {
    if (n == 1) return std::int64_t{0};
    const std::int64_t period = 2 * (n - 1);
    i %= period;
    return i < n ? i : period - i;
  };
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::int64_t OD = out_shape[2], OH = out_shape[3], OW = out_shape[4];
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* src = x.data<T>();
    T* dst = out.mutable_data<T>();
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t z = 0; z < OD; ++z)
        for (std::int64_t y = 0; y < OH; ++y)
          for (std::int64_t w = 0; w < OW; ++w)
            dst[((p * OD + z) * OH + y) * OW + w] =
                src[((p * D + mirror(z, D)) * H + mirror(y, H)) * W + mirror(w, W)];
  });
  return out;
}

Tensor sliding_window_infer(const GlimsModel& model, const Tensor& x, double overlap) {
  if (x.rank() != 5 || x.dim(0) != 1)
    throw ShapeError("sliding_window_infer: expected [1, C, D, H, W], got " + shape_str(x.shape()));
  NoGradGuard guard;
  const std::int64_t patch = model.config().patch_size;
  const std::int64_t K = model.config().num_classes;
  const Tensor padded = reflect_pad_to(x.dtype() == model.dtype() ? x : x.to(model.dtype()), patch);
  const std::int64_t D = padded.dim(2), H = padded.dim(3), W = padded.dim(4);
  const auto sz = window_starts(D, patch, overlap);
  const auto sy = window_starts(H, patch, overlap);
  const auto sx = window_starts(W, patch, overlap);

  std::vector<double> acc(static_cast<std::size_t>(K * D * H * W), 0.0);
  std::vector<std::int32_t> count(static_cast<std::size_t>(D * H * W), 0);
  const std::int64_t channels = padded.dim(1);
  // Fixed window order keeps the accumulation deterministic.
  for (std::int64_t z0 : sz)
    for (std::int64_t y0 : sy)
      for (std::int64_t x0 : sx) {
        const std::int64_t starts[] = {0, 0, z0, y0, x0};
        const std::int64_t extents[] = {1, channels, patch, patch, patch};
        const Tensor logits = model.forward(crop(padded, starts, extents)).logits;
        const auto v = logits.to_vector();
        for (std::int64_t k = 0; k < K; ++k)
          for (std::int64_t z = 0; z < patch; ++z)
            for (std::int64_t y = 0; y < patch; ++y)
              for (std::int64_t w = 0; w < patch; ++w)
                acc[static_cast<std::size_t>(((k * D + z0 + z) * H + y0 + y) * W + x0 + w)] +=
                    v[static_cast<std::size_t>(((k * patch + z) * patch + y) * patch + w)];
        for (std::int64_t z = 0; z < patch; ++z)
          for (std::int64_t y = 0; y < patch; ++y)
            for (std::int64_t w = 0; w < patch; ++w) ++count[static_cast<std::size_t>(((z0 + z) * H + y0 + y) * W + x0 + w)];
      }

  const std::int64_t OD = x.dim(2), OH = x.dim(3), OW = x.dim(4);
  std::vector<double> out(static_cast<std::size_t>(K * OD * OH * OW));
  for (std::int64_t k = 0; k < K; ++k)
    for (std::int64_t z = 0; z < OD; ++z)
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t w = 0; w < OW; ++w) {
          const auto c = count[static_cast<std::size_t>((z * H + y) * W + w)];
          if (c == 0) throw NumericError("sliding_window_infer: voxel not covered by any window");
          out[static_cast<std::size_t>(((k * OD + z) * OH + y) * OW + w)] =
              acc[static_cast<std::size_t>(((k * D + z) * H + y) * W + w)] / c;
        }
  return Tensor::from_values({1, K, OD, OH, OW}, out, model.dtype());
}

std::vector<std::uint8_t> argmax_labels(const Tensor& logits) {
  if (logits.rank() != 5) throw ShapeError("argmax_labels: expected [N, K, D, H, W], got " + shape_str(logits.shape()));
  const std::int64_t N = logits.dim(0), K = logits.dim(1);
  const std::int64_t plane = logits.dim(2) * logits.dim(3) * logits.dim(4);
  const auto v = logits.to_vector();
  std::vector<std::uint8_t> ids(static_cast<std::size_t>(N * plane));
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t i = 0; i < plane; ++i) {
      std::int64_t best = 0;
      for (std::int64_t k = 1; k < K; ++k)
        if (v[static_cast<std::size_t>((n * K + k) * plane + i)] > v[static_cast<std::size_t>((n * K + best) * plane + i)]) best = k;
      ids[static_cast<std::size_t>(n * plane + i)] = static_cast<std::uint8_t>(best);
    }
  return ids;
}

}  // namespace glims
