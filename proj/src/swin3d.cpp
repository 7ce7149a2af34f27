#include "glims/swin3d.hpp"

#include <cmath>

#include "glims/autograd.hpp"
#include "glims/ops.hpp"

namespace glims {
namespace {

constexpr double kMaskValue = -1e9;

void require_tokens(const Tensor& x, std::int64_t dim, const char* where) {
  if (x.rank() != 5)
    throw ShapeError(std::string(where) + ": expected [N, D, H, W, C], got " + shape_str(x.shape()));
  if (dim > 0 && x.dim(4) != dim)
    throw ShapeError(std::string(where) + ": expected " + std::to_string(dim) + " channels (axis 4), got " +
                     std::to_string(x.dim(4)));
}

Extent3 grid_of(const Tensor& x) { return {x.dim(1), x.dim(2), x.dim(3)}; }

Extent3 padded_grid(const Extent3& grid, const Extent3& window) {
  Extent3 p{};
  for (int a = 0; a < 3; ++a) p[a] = (grid[a] + window[a] - 1) / window[a] * window[a];
  return p;
}

bool any_nonzero(const Extent3& e) { return e[0] != 0 || e[1] != 0 || e[2] != 0; }

}  // namespace

Extent3 effective_window(const Extent3& grid, std::int64_t window) {
  if (window < 1) throw ConfigError("window size must be >= 1, got " + std::to_string(window));
  Extent3 w{};
  for (int a = 0; a < 3; ++a) w[a] = std::min(window, grid[a]);
  return w;
}

Extent3 shift_for(const Extent3& window) { return {window[0] / 2, window[1] / 2, window[2] / 2}; }

Tensor partition_windows(const Tensor& x, const Extent3& window) {
  require_tokens(x, 0, "partition_windows");
  const Extent3 g = grid_of(x);
  for (int a = 0; a < 3; ++a) {
    if (window[a] < 1) throw ConfigError("partition_windows: window extent must be >= 1");
    if (g[a] % window[a] != 0)
      throw ShapeError("partition_windows: grid axis " + std::to_string(a + 1) + " extent " + std::to_string(g[a]) +
                       " is not a multiple of the window " + std::to_string(window[a]));
  }
  const std::int64_t n = x.dim(0), c = x.dim(4);
  Tensor t = reshape(x, {n, g[0] / window[0], window[0], g[1] / window[1], window[1], g[2] / window[2], window[2], c});
  t = permute(t, {0, 1, 3, 5, 2, 4, 6, 7});
  return reshape(t, {-1, window[0] * window[1] * window[2], c});
}

Tensor merge_windows(const Tensor& windows, std::int64_t batch, const Extent3& grid, const Extent3& window) {
  if (windows.rank() != 3) throw ShapeError("merge_windows: expected [B, L, C], got " + shape_str(windows.shape()));
  const std::int64_t c = windows.dim(2);
  const Extent3 nw{grid[0] / window[0], grid[1] / window[1], grid[2] / window[2]};
  if (windows.dim(0) != batch * nw[0] * nw[1] * nw[2] || windows.dim(1) != window[0] * window[1] * window[2])
    throw ShapeError("merge_windows: " + shape_str(windows.shape()) + " does not tile the grid");
  Tensor t = reshape(windows, {batch, nw[0], nw[1], nw[2], window[0], window[1], window[2], c});
  t = permute(t, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(t, {batch, grid[0], grid[1], grid[2], c});
}

Tensor to_channels_last(const Tensor& x) {
  if (x.rank() != 5) throw ShapeError("to_channels_last: expected rank 5, got " + shape_str(x.shape()));
  return permute(x, {0, 2, 3, 4, 1});
}

Tensor to_channels_first(const Tensor& x) {
  if (x.rank() != 5) throw ShapeError("to_channels_first: expected rank 5, got " + shape_str(x.shape()));
  return permute(x, {0, 4, 1, 2, 3});
}

Tensor window_partition(const Tensor& x, std::int64_t window) {
  if (window < 1) throw ConfigError("window_partition: M must be >= 1, got " + std::to_string(window));
  Tensor t = to_channels_last(x);
  const Extent3 w{window, window, window};
  const Extent3 p = padded_grid(grid_of(t), w);
  const std::pair<std::int64_t, std::int64_t> widths[] = {
      {0, 0}, {0, p[0] - t.dim(1)}, {0, p[1] - t.dim(2)}, {0, p[2] - t.dim(3)}, {0, 0}};
  return partition_windows(pad(t, widths), w);
}

Tensor window_reverse(const Tensor& windows, const Shape& original, std::int64_t window) {
  if (window < 1) throw ConfigError("window_reverse: M must be >= 1, got " + std::to_string(window));
  if (original.size() != 5) throw ShapeError("window_reverse: original shape must be [N, C, D, H, W]");
  const Extent3 w{window, window, window};
  const Extent3 p = padded_grid({original[2], original[3], original[4]}, w);
  Tensor t = merge_windows(windows, original[0], p, w);
  const std::int64_t starts[] = {0, 0, 0, 0, 0};
  const std::int64_t extents[] = {original[0], original[2], original[3], original[4], original[1]};
  return to_channels_first(crop(t, starts, extents));
}

Tensor cyclic_shift(const Tensor& x, const Extent3& shift) {
  require_tokens(x, 0, "cyclic_shift");
  const std::int64_t s[] = {0, -shift[0], -shift[1], -shift[2], 0};
  return roll(x, s);
}

Tensor cyclic_unshift(const Tensor& x, const Extent3& shift) {
  require_tokens(x, 0, "cyclic_unshift");
  const std::int64_t s[] = {0, shift[0], shift[1], shift[2], 0};
  return roll(x, s);
}

std::vector<int> shift_regions(const Extent3& grid, const Extent3& window, const Extent3& shift) {
  auto region = [&](int axis, std::int64_t i) {
    const auto a = static_cast<std::size_t>(axis);
    if (i < grid[a] - window[a]) return 0;
    if (i < grid[a] - shift[a]) return 1;
    return 2;
  };
  std::vector<int> ids(static_cast<std::size_t>(grid[0] * grid[1] * grid[2]));
  std::size_t k = 0;
  for (std::int64_t z = 0; z < grid[0]; ++z)
    for (std::int64_t y = 0; y < grid[1]; ++y)
      for (std::int64_t x = 0; x < grid[2]; ++x) ids[k++] = region(0, z) * 9 + region(1, y) * 3 + region(2, x);
  return ids;
}

Tensor shifted_window_mask(const Extent3& grid, const Extent3& window, const Extent3& shift, DType dtype) {
  const std::vector<int> ids = shift_regions(grid, window, shift);
  std::vector<double> flat(ids.begin(), ids.end());
  Tensor id_grid = Tensor::from_values({1, grid[0], grid[1], grid[2], 1}, flat, DType::f64);
  const Tensor win = partition_windows(id_grid, window);  // [nW, L, 1]
  const std::int64_t nw = win.dim(0), l = win.dim(1);
  Tensor mask = Tensor::zeros({nw, l, l}, dtype);
  const double* w = win.data<double>();
  for (std::int64_t b = 0; b < nw; ++b)
    for (std::int64_t i = 0; i < l; ++i)
      for (std::int64_t j = 0; j < l; ++j)
        if (w[b * l + i] != w[b * l + j]) mask.set((b * l + i) * l + j, kMaskValue);
  return mask;
}

WindowAttention WindowAttention::make(Initializer& init, std::int64_t dim, std::int64_t heads) {
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  WindowAttention a;
  a.dim = dim;
  a.heads = heads;
  a.qkv_weight = init.trunc_normal({3 * dim, dim});
  a.qkv_bias = init.zeros({3 * dim});
  a.proj_weight = init.trunc_normal({dim, dim});
  a.proj_bias = init.zeros({dim});
  return a;
}

namespace {

Tensor attention_probs(const WindowAttention& a, const Tensor& tokens, const Tensor& mask, Tensor* v_out) {
  if (tokens.rank() != 3 || tokens.dim(2) != a.dim)
    throw ShapeError("attention: expected [B, L, " + std::to_string(a.dim) + "], got " + shape_str(tokens.shape()));
  const std::int64_t b = tokens.dim(0), l = tokens.dim(1), h = a.heads, d = a.dim / a.heads;
  Tensor qkv = permute(reshape(linear(tokens, a.qkv_weight, a.qkv_bias), {b, l, 3, h, d}), {2, 0, 3, 1, 4});
  const std::int64_t sizes[] = {1, 1, 1};
  auto parts = split(qkv, 0, sizes);
  Tensor q = scale(reshape(parts[0], {b * h, l, d}), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor k = reshape(parts[1], {b * h, l, d});
  *v_out = reshape(parts[2], {b * h, l, d});
  Tensor scores = matmul(q, k, false, true);
  if (mask.defined()) {
    if (mask.rank() != 3 || mask.dim(1) != l || mask.dim(2) != l || mask.dim(0) < 1 || b % mask.dim(0) != 0)
      throw ShapeError("attention: mask " + shape_str(mask.shape()) + " incompatible with " +
                       std::to_string(b) + " windows of " + std::to_string(l) + " tokens");
    const std::int64_t nw = mask.dim(0);
    scores = reshape(add(reshape(scores, {b / nw, nw, h, l, l}), reshape(mask, {1, nw, 1, l, l})), {b * h, l, l});
  }
  return softmax(scores, -1);
}

}  // namespace

Tensor WindowAttention::forward(const Tensor& tokens, const Tensor& mask) const {
  Tensor v;
  Tensor probs = attention_probs(*this, tokens, mask, &v);
  const std::int64_t b = tokens.dim(0), l = tokens.dim(1);
  Tensor out = matmul(probs, v);  // [B*h, L, d]
  out = reshape(permute(reshape(out, {b, heads, l, dim / heads}), {0, 2, 1, 3}), {b, l, dim});
  return linear(out, proj_weight, proj_bias);
}

Tensor WindowAttention::attention_weights(const Tensor& tokens, const Tensor& mask) const {
  NoGradGuard guard;
  Tensor v;
  Tensor probs = attention_probs(*this, tokens, mask, &v);
  return reshape(probs, {tokens.dim(0), heads, tokens.dim(1), tokens.dim(1)});
}

void WindowAttention::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".qkv.weight", qkv_weight});
  out.push_back({prefix + ".qkv.bias", qkv_bias});
  out.push_back({prefix + ".proj.weight", proj_weight});
  out.push_back({prefix + ".proj.bias", proj_bias});
}

SwinBlock SwinBlock::make(Initializer& init, std::int64_t dim, std::int64_t heads, double mlp_ratio, bool shifted) {
  SwinBlock s;
  s.dim = dim;
  s.shifted = shifted;
  s.norm1_gamma = init.ones({dim});
  s.norm1_beta = init.zeros({dim});
  s.attention = WindowAttention::make(init, dim, heads);
  s.norm2_gamma = init.ones({dim});
  s.norm2_beta = init.zeros({dim});
  const auto hidden = static_cast<std::int64_t>(std::llround(mlp_ratio * static_cast<double>(dim)));
  s.fc1_weight = init.trunc_normal({hidden, dim});
  s.fc1_bias = init.zeros({hidden});
  s.fc2_weight = init.trunc_normal({dim, hidden});
  s.fc2_bias = init.zeros({dim});
  return s;
}

Tensor SwinBlock::forward(const Tensor& x, std::int64_t window) const {
  require_tokens(x, dim, "swin block");
  const Extent3 grid = grid_of(x);
  const Extent3 win = effective_window(grid, window);
  const Extent3 padded = padded_grid(grid, win);
  const Extent3 shift = shifted ? shift_for(win) : Extent3{0, 0, 0};

  Tensor h = layer_norm(x, norm1_gamma, norm1_beta);
  const bool needs_pad = padded != grid;
  if (needs_pad) {
    const std::pair<std::int64_t, std::int64_t> widths[] = {
        {0, 0}, {0, padded[0] - grid[0]}, {0, padded[1] - grid[1]}, {0, padded[2] - grid[2]}, {0, 0}};
    h = pad(h, widths);
  }
  Tensor mask;
  if (any_nonzero(shift)) {
    h = cyclic_shift(h, shift);
    mask = shifted_window_mask(padded, win, shift, x.dtype());
  }
  h = merge_windows(attention.forward(partition_windows(h, win), mask), x.dim(0), padded, win);
  if (any_nonzero(shift)) h = cyclic_unshift(h, shift);
  if (needs_pad) {
    const std::int64_t starts[] = {0, 0, 0, 0, 0};
    h = crop(h, starts, x.shape());
  }
  Tensor y = add(x, h);
  Tensor m = linear(gelu(linear(layer_norm(y, norm2_gamma, norm2_beta), fc1_weight, fc1_bias)), fc2_weight, fc2_bias);
  return add(y, m);
}

void SwinBlock::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".norm1.gamma", norm1_gamma});
  out.push_back({prefix + ".norm1.beta", norm1_beta});
  attention.collect(prefix + ".attn", out);
  out.push_back({prefix + ".norm2.gamma", norm2_gamma});
  out.push_back({prefix + ".norm2.beta", norm2_beta});
  out.push_back({prefix + ".fc1.weight", fc1_weight});
  out.push_back({prefix + ".fc1.bias", fc1_bias});
  out.push_back({prefix + ".fc2.weight", fc2_weight});
  out.push_back({prefix + ".fc2.bias", fc2_bias});
}

SwinStage SwinStage::make(Initializer& init, std::int64_t dim, const Extent3& grid, std::int64_t depth,
                          std::int64_t heads, double mlp_ratio, std::int64_t window) {
  SwinStage s;
  s.window = window;
  s.position = init.trunc_normal({grid[0], grid[1], grid[2], dim});
  for (std::int64_t i = 0; i < depth; ++i) s.blocks.push_back(SwinBlock::make(init, dim, heads, mlp_ratio, i % 2 == 1));
  return s;
}

Tensor SwinStage::forward(const Tensor& x) const {
  require_tokens(x, position.dim(3), "swin stage");
  for (int a = 0; a < 3; ++a)
    if (x.dim(a + 1) != position.dim(a))
      throw ShapeError("swin stage: grid " + shape_str(x.shape()) + " does not match positional embedding " +
                       shape_str(position.shape()));
  Tensor h = add(x, position);
  for (const SwinBlock& b : blocks) h = b.forward(h, window);
  return h;
}

void SwinStage::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".position", position});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

PatchMerge PatchMerge::make(Initializer& init, std::int64_t dim) {
  return {dim, init.trunc_normal({2 * dim, 8 * dim}), init.zeros({2 * dim})};
}

Tensor PatchMerge::forward(const Tensor& x) const {
  require_tokens(x, dim, "patch merge");
  const std::int64_t n = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int a = 1; a < 4; ++a)
    if (x.dim(a) % 2 != 0)
      throw ShapeError("patch merge: grid axis " + std::to_string(a) + " has odd extent " + std::to_string(x.dim(a)));
  Tensor t = reshape(x, {n, d / 2, 2, h / 2, 2, w / 2, 2, dim});
  t = reshape(permute(t, {0, 1, 3, 5, 2, 4, 6, 7}), {n, d / 2, h / 2, w / 2, 8 * dim});
  return linear(t, weight, bias);
}

void PatchMerge::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

PatchExpand PatchExpand::make(Initializer& init, std::int64_t dim) {
  if (dim % 2 != 0) throw ConfigError("patch expand: channel count must be even, got " + std::to_string(dim));
  return {dim, init.trunc_normal({4 * dim, dim}), init.zeros({4 * dim})};
}

Tensor PatchExpand::forward(const Tensor& x) const {
  require_tokens(x, dim, "patch expand");
  const std::int64_t n = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3), c = dim / 2;
  Tensor t = reshape(linear(x, weight, bias), {n, d, h, w, 2, 2, 2, c});
  t = permute(t, {0, 1, 4, 2, 5, 3, 6, 7});
  return reshape(t, {n, 2 * d, 2 * h, 2 * w, c});
}

void PatchExpand::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace glims
