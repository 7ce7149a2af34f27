#include "glims/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "glims/autograd.hpp"
#include "glims/kernels.hpp"

namespace glims {
namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

Tensor make_output(Shape shape, DType dt, bool record) {
  Tensor out = Tensor::zeros(std::move(shape), dt);
  if (record) out.set_requires_grad(true);
  return out;
}

void finish(const Tensor& out, const char* op_name) {
  if (finite_check_enabled()) check_finite(out, op_name);
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op_name) {
  if (a.dtype() != b.dtype())
    throw Error(std::string(op_name) + ": dtype mismatch (" + dtype_name(a.dtype()) + " vs " +
                dtype_name(b.dtype()) + ")");
}

void require_rank(const Tensor& t, int rank, const char* op_name, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op_name) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got shape " + shape_str(t.shape()));
}

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[static_cast<std::size_t>(i)] =
        s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  return s;
}

// Strides of `in` viewed with the rank of `out`, right-aligned; broadcast axes get 0.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const auto cs = contiguous_strides(in);
  std::vector<std::int64_t> s(out.size(), 0);
  const std::size_t lead = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i)
    s[lead + i] = in[i] == 1 && out[lead + i] != 1 ? 0 : cs[i];
  return s;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op_name) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw ShapeError(std::string(op_name) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b) + " (axis " + std::to_string(i) + ")");
    out[i] = ea == 1 ? eb : ea;
  }
  return out;
}

// Walks `domain` in row-major order one innermost row at a time. For each of
// the K stride sets, passes the offset of the row start and the stride along
// the innermost axis.
template <std::size_t K, class F>
void walk_rows(const Shape& domain, const std::array<std::vector<std::int64_t>, K>& strides,
               std::array<std::int64_t, K> base, F&& f) {
  if (shape_numel(domain) == 0) return;
  const int rank = static_cast<int>(domain.size());
  if (rank == 0) {
    std::array<std::int64_t, K> inner{};
    f(base, std::int64_t{1}, inner);
    return;
  }
  const std::int64_t len = domain.back();
  std::array<std::int64_t, K> inner{};
  for (std::size_t k = 0; k < K; ++k) inner[k] = strides[k].back();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank - 1), 0);
  std::array<std::int64_t, K> off = base;
  const std::int64_t rows = shape_numel(domain) / len;
  for (std::int64_t r = 0; r < rows; ++r) {
    f(off, len, inner);
    for (int ax = rank - 2; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      ++idx[a];
      for (std::size_t k = 0; k < K; ++k) off[k] += strides[k][a];
      if (idx[a] < domain[a]) break;
      for (std::size_t k = 0; k < K; ++k) off[k] -= strides[k][a] * domain[a];
      idx[a] = 0;
    }
  }
}

// Adds g (shape out) into dst (shape in, broadcast to out), summing over broadcast axes.
template <class T>
void reduce_broadcast_add(const T* g, const Shape& out, T* dst, const Shape& in) {
  if (in == out) {
    const std::int64_t n = shape_numel(out);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
    return;
  }
  walk_rows<2>(out, {contiguous_strides(out), broadcast_strides(in, out)}, {0, 0},
               [&](auto off, std::int64_t len, auto inner) {
                 for (std::int64_t i = 0; i < len; ++i) dst[off[1] + i * inner[1]] += g[off[0] + i];
               });
}

enum class BinaryKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* op_name) {
  require_same_dtype(a, b, op_name);
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), op_name);
  const bool rec = should_record({&a, &b});
  Tensor out = make_output(out_shape, a.dtype(), rec);
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.mutable_data<T>();
    auto apply = [kind](T x, T y) {
      switch (kind) {
        case BinaryKind::add: return x + y;
        case BinaryKind::sub: return x - y;
        default: return x * y;
      }
    };
    if (a.shape() == out_shape && b.shape() == out_shape) {
      const std::int64_t n = out.numel();
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < n; ++i) po[i] = apply(pa[i], pb[i]);
    } else {
      walk_rows<3>(out_shape,
                   {contiguous_strides(out_shape), broadcast_strides(a.shape(), out_shape),
                    broadcast_strides(b.shape(), out_shape)},
                   {0, 0, 0}, [&](auto off, std::int64_t len, auto inner) {
                     for (std::int64_t i = 0; i < len; ++i)
                       po[off[0] + i] = apply(pa[off[1] + i * inner[1]], pb[off[2] + i * inner[2]]);
                   });
    }
  });
  if (rec) {
    current_tape().record(out, {a, b}, [a, b, kind, out_shape](const Tensor& g) {
      dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        const std::int64_t n = shape_numel(out_shape);
        auto grad_for = [&](const Tensor& self, const Tensor& other, bool negate) {
          if (!self.requires_grad()) return;
          T* dst = grad_buffer<T>(self);
          if (kind == BinaryKind::mul) {
            // d(self * other)/d(self) = other, broadcast to out.
            std::vector<T> prod(static_cast<std::size_t>(n));
            const T* po = other.data<T>();
            if (other.shape() == out_shape) {
              for (std::int64_t i = 0; i < n; ++i) prod[static_cast<std::size_t>(i)] = pg[i] * po[i];
            } else {
              walk_rows<2>(out_shape,
                           {contiguous_strides(out_shape), broadcast_strides(other.shape(), out_shape)},
                           {0, 0}, [&](auto off, std::int64_t len, auto inner) {
                             for (std::int64_t i = 0; i < len; ++i)
                               prod[static_cast<std::size_t>(off[0] + i)] =
                                   pg[off[0] + i] * po[off[1] + i * inner[1]];
                           });
            }
            reduce_broadcast_add(prod.data(), out_shape, dst, self.shape());
          } else if (negate) {
            std::vector<T> neg(pg, pg + n);
            for (auto& v : neg) v = -v;
            reduce_broadcast_add(neg.data(), out_shape, dst, self.shape());
          } else {
            reduce_broadcast_add(pg, out_shape, dst, self.shape());
          }
        };
        grad_for(a, b, false);
        grad_for(b, a, kind == BinaryKind::sub);
      });
    });
  }
  finish(out, op_name);
  return out;
}

// Elementwise map with derivative expressed through input and output values.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op_name, Fwd fwd, Deriv deriv) {
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) po[i] = static_cast<T>(fwd(static_cast<double>(px[i])));
  });
  if (rec) {
    current_tape().record(out, {x}, [x, out, deriv](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* px = x.data<T>();
        const T* po = out.data<T>();
        const T* pg = g.data<T>();
        T* dst = grad_buffer<T>(x);
        const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i)
          dst[i] += pg[i] * static_cast<T>(deriv(static_cast<double>(px[i]), static_cast<double>(po[i])));
      });
    });
  }
  finish(out, op_name);
  return out;
}

enum class ReduceKind { sum, mean, max };

Tensor reduce(const Tensor& x, std::span<const int> axes, bool keepdim, ReduceKind kind,
              const char* op_name) {
  const int rank = x.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), false);
  for (int a : axes) reduced[static_cast<std::size_t>(normalize_axis(a, rank, op_name))] = true;
  Shape kept = x.shape();
  std::int64_t count = 1;
  for (int i = 0; i < rank; ++i)
    if (reduced[static_cast<std::size_t>(i)]) {
      count *= kept[static_cast<std::size_t>(i)];
      kept[static_cast<std::size_t>(i)] = 1;
    }
  if (kind == ReduceKind::max && count == 0)
    throw ShapeError(std::string(op_name) + ": max over an empty axis");
  Shape out_shape;
  for (int i = 0; i < rank; ++i)
    if (keepdim || !reduced[static_cast<std::size_t>(i)]) out_shape.push_back(kept[static_cast<std::size_t>(i)]);

  const bool rec = should_record({&x});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  const auto out_strides = broadcast_strides(kept, x.shape());
  // Flat index of the selected element per output, for max.
  auto argmax = std::make_shared<std::vector<std::int64_t>>();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    if (kind == ReduceKind::max) {
      argmax->assign(static_cast<std::size_t>(out.numel()), -1);
    }
    walk_rows<2>(x.shape(), {contiguous_strides(x.shape()), out_strides}, {0, 0},
                 [&](auto off, std::int64_t len, auto inner) {
                   for (std::int64_t i = 0; i < len; ++i) {
                     const std::int64_t o = off[1] + i * inner[1];
                     const std::int64_t src = off[0] + i;
                     if (kind == ReduceKind::max) {
                       auto& am = (*argmax)[static_cast<std::size_t>(o)];
                       if (am < 0 || px[src] > px[am]) am = src;
                     } else {
                       po[o] += px[src];
                     }
                   }
                 });
    if (kind == ReduceKind::max) {
      for (std::int64_t o = 0; o < out.numel(); ++o) po[o] = px[(*argmax)[static_cast<std::size_t>(o)]];
    } else if (kind == ReduceKind::mean) {
      for (std::int64_t o = 0; o < out.numel(); ++o) po[o] /= static_cast<T>(count);
    }
  });
  if (rec) {
    Shape in_shape = x.shape();
    current_tape().record(out, {x}, [x, kind, count, out_strides, in_shape, argmax](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        T* dst = grad_buffer<T>(x);
        if (kind == ReduceKind::max) {
          for (std::size_t o = 0; o < argmax->size(); ++o) dst[(*argmax)[o]] += pg[o];
          return;
        }
        const T factor = kind == ReduceKind::mean ? T(1) / static_cast<T>(count) : T(1);
        walk_rows<2>(in_shape, {contiguous_strides(in_shape), out_strides}, {0, 0},
                     [&](auto off, std::int64_t len, auto inner) {
                       for (std::int64_t i = 0; i < len; ++i)
                         dst[off[0] + i] += factor * pg[off[1] + i * inner[1]];
                     });
      });
    });
  }
  finish(out, op_name);
  return out;
}

// Copies the box [starts, starts + extent(dst)) of src into dst (crop), or
// dst's box at starts from src (paste), accumulating when requested.
template <class T>
void copy_box(const T* src, const Shape& src_shape, T* dst, const Shape& dst_shape,
              std::span<const std::int64_t> starts, bool paste, bool accumulate) {
  // The box has the shape of the smaller tensor.
  const Shape& box = paste ? src_shape : dst_shape;
  const Shape& big = paste ? dst_shape : src_shape;
  const auto big_strides = contiguous_strides(big);
  std::int64_t base = 0;
  for (std::size_t i = 0; i < starts.size(); ++i) base += starts[i] * big_strides[i];
  walk_rows<2>(box, {contiguous_strides(box), big_strides}, {0, base},
               [&](auto off, std::int64_t len, auto) {
                 const T* s = paste ? src + off[0] : src + off[1];
                 T* d = paste ? dst + off[1] : dst + off[0];
                 if (accumulate) {
                   for (std::int64_t i = 0; i < len; ++i) d[i] += s[i];
                 } else {
                   std::copy(s, s + len, d);
                 }
               });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, "leaky_relu", [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor reciprocal(const Tensor& x) {
  return unary(
      x, "reciprocal", [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor softmax(const Tensor& x, int axis) {
  const int ax = normalize_axis(axis, x.rank(), "softmax");
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < x.rank(); ++i) inner *= x.shape()[static_cast<std::size_t>(i)];
  const std::int64_t len = x.shape()[static_cast<std::size_t>(ax)];
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::softmax_forward(x.data<T>(), out.mutable_data<T>(), outer, len, inner);
  });
  if (rec) {
    current_tape().record(out, {x}, [x, out, outer, len, inner](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels::softmax_backward(g.data<T>(), out.data<T>(), grad_buffer<T>(x), outer, len, inner);
      });
    });
  }
  finish(out, "softmax");
  return out;
}

Tensor sum(const Tensor& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(x, axes, false, ReduceKind::sum, "sum");
}

Tensor sum(const Tensor& x, std::span<const int> axes, bool keepdim) {
  return reduce(x, axes, keepdim, ReduceKind::sum, "sum");
}

Tensor mean(const Tensor& x, std::span<const int> axes, bool keepdim) {
  return reduce(x, axes, keepdim, ReduceKind::mean, "mean");
}

Tensor amax(const Tensor& x, std::span<const int> axes, bool keepdim) {
  return reduce(x, axes, keepdim, ReduceKind::max, "amax");
}

Tensor max_over_axis(const Tensor& x, int axis) {
  const int axes[] = {axis};
  return reduce(x, axes, true, ReduceKind::max, "max_over_axis");
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  const int axes[] = {axis};
  return reduce(x, axes, true, ReduceKind::mean, "mean_over_axis");
}

Tensor max_pool_global(const Tensor& x) {
  require_rank(x, 5, "max_pool_global", "input");
  const int axes[] = {2, 3, 4};
  return reduce(x, axes, true, ReduceKind::max, "max_pool_global");
}

Tensor avg_pool_global(const Tensor& x) {
  require_rank(x, 5, "avg_pool_global", "input");
  const int axes[] = {2, 3, 4};
  return reduce(x, axes, true, ReduceKind::mean, "avg_pool_global");
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Tensor& first = parts.front();
  const int ax = normalize_axis(axis, first.rank(), "concat");
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(ax)] = 0;
  bool rec = false;
  for (const Tensor& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.rank() != first.rank())
      throw ShapeError("concat: rank mismatch " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    for (int i = 0; i < first.rank(); ++i)
      if (i != ax && p.shape()[static_cast<std::size_t>(i)] != first.shape()[static_cast<std::size_t>(i)])
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(i) + " (" +
                         shape_str(first.shape()) + " vs " + shape_str(p.shape()) + ")");
    out_shape[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
    rec = rec || should_record({&p});
  }
  Tensor out = make_output(out_shape, first.dtype(), rec);
  std::vector<std::int64_t> starts(static_cast<std::size_t>(first.rank()), 0);
  std::vector<std::vector<std::int64_t>> offsets;
  dispatch(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (const Tensor& p : parts) {
      offsets.push_back(starts);
      copy_box(p.data<T>(), p.shape(), out.mutable_data<T>(), out_shape, starts, true, false);
      starts[static_cast<std::size_t>(ax)] += p.shape()[static_cast<std::size_t>(ax)];
    }
  });
  if (rec) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    current_tape().record(out, inputs, [inputs, offsets, out_shape](const Tensor& g) {
      dispatch(g.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
          if (!inputs[i].requires_grad()) continue;
          copy_box(g.data<T>(), out_shape, grad_buffer<T>(inputs[i]), inputs[i].shape(), offsets[i],
                   false, true);
        }
      });
    });
  }
  return out;
}

Tensor crop(const Tensor& x, std::span<const std::int64_t> starts,
            std::span<const std::int64_t> extents) {
  if (static_cast<int>(starts.size()) != x.rank() || static_cast<int>(extents.size()) != x.rank())
    throw ShapeError("crop: expected " + std::to_string(x.rank()) + " starts and extents");
  Shape out_shape(extents.begin(), extents.end());
  for (int i = 0; i < x.rank(); ++i) {
    const auto a = static_cast<std::size_t>(i);
    if (starts[a] < 0 || extents[a] < 0 || starts[a] + extents[a] > x.shape()[a])
      throw ShapeError("crop: box [" + std::to_string(starts[a]) + ", " +
                       std::to_string(starts[a] + extents[a]) + ") outside axis " + std::to_string(i) +
                       " of extent " + std::to_string(x.shape()[a]));
  }
  const bool rec = should_record({&x});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  std::vector<std::int64_t> st(starts.begin(), starts.end());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    copy_box(x.data<T>(), x.shape(), out.mutable_data<T>(), out_shape, st, false, false);
  });
  if (rec) {
    current_tape().record(out, {x}, [x, st, out_shape](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        copy_box(g.data<T>(), out_shape, grad_buffer<T>(x), x.shape(), st, true, true);
      });
    });
  }
  return out;
}

Tensor pad(const Tensor& x, std::span<const std::pair<std::int64_t, std::int64_t>> widths) {
  if (static_cast<int>(widths.size()) != x.rank())
    throw ShapeError("pad: expected " + std::to_string(x.rank()) + " (before, after) pairs");
  Shape out_shape = x.shape();
  std::vector<std::int64_t> st(widths.size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i].first < 0 || widths[i].second < 0) throw ShapeError("pad: negative width on axis " + std::to_string(i));
    out_shape[i] += widths[i].first + widths[i].second;
    st[i] = widths[i].first;
  }
  const bool rec = should_record({&x});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    copy_box(x.data<T>(), x.shape(), out.mutable_data<T>(), out_shape, st, true, false);
  });
  if (rec) {
    current_tape().record(out, {x}, [x, st, out_shape](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        copy_box(g.data<T>(), out_shape, grad_buffer<T>(x), x.shape(), st, false, true);
      });
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = normalize_axis(axis, x.rank(), "slice");
  std::vector<std::int64_t> starts(static_cast<std::size_t>(x.rank()), 0);
  std::vector<std::int64_t> extents(x.shape().begin(), x.shape().end());
  starts[static_cast<std::size_t>(ax)] = start;
  extents[static_cast<std::size_t>(ax)] = length;
  return crop(x, starts, extents);
}

std::vector<Tensor> split(const Tensor& x, int axis, std::span<const std::int64_t> sizes) {
  const int ax = normalize_axis(axis, x.rank(), "split");
  std::int64_t total = 0;
  for (auto s : sizes) total += s;
  if (total != x.shape()[static_cast<std::size_t>(ax)])
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis " +
                     std::to_string(ax) + " has extent " +
                     std::to_string(x.shape()[static_cast<std::size_t>(ax)]));
  std::vector<Tensor> out;
  std::int64_t start = 0;
  for (auto s : sizes) {
    out.push_back(slice(x, ax, start, s));
    start += s;
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  const bool rec = should_record({&x});
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->dtype = x.dtype();
  impl->data = x.impl()->data;
  Tensor out(std::move(impl));
  if (rec) {
    out.set_requires_grad(true);
    current_tape().record(out, {x}, [x](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        T* dst = grad_buffer<T>(x);
        const std::int64_t n = x.numel();
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < n; ++i) dst[i] += pg[i];
      });
    });
  }
  return out;
}

Tensor permute(const Tensor& x, std::initializer_list<int> order) {
  return permute(x, std::span<const int>(order.begin(), order.size()));
}

Tensor permute(const Tensor& x, std::span<const int> order) {
  const int rank = x.rank();
  if (static_cast<int>(order.size()) != rank)
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " axes for rank " +
                     std::to_string(rank));
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  const auto in_strides = contiguous_strides(x.shape());
  std::vector<std::int64_t> gather(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i) {
    const int a = normalize_axis(order[static_cast<std::size_t>(i)], rank, "permute");
    if (seen[static_cast<std::size_t>(a)]) throw ShapeError("permute: repeated axis " + std::to_string(a));
    seen[static_cast<std::size_t>(a)] = true;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(a)];
    gather[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(a)];
  }
  const bool rec = should_record({&x});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  const auto out_strides = contiguous_strides(out_shape);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
    walk_rows<2>(out_shape, {out_strides, gather}, {0, 0}, [&](auto off, std::int64_t len, auto inner) {
      for (std::int64_t i = 0; i < len; ++i) po[off[0] + i] = px[off[1] + i * inner[1]];
    });
  });
  if (rec) {
    current_tape().record(out, {x}, [x, out_shape, out_strides, gather](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        T* dst = grad_buffer<T>(x);
        walk_rows<2>(out_shape, {out_strides, gather}, {0, 0}, [&](auto off, std::int64_t len, auto inner) {
          for (std::int64_t i = 0; i < len; ++i) dst[off[1] + i * inner[1]] += pg[off[0] + i];
        });
      });
    });
  }
  return out;
}

namespace {

// dst[i] (+)= src[(i - shift) mod extent] along every axis.
template <class T>
void roll_copy(const T* src, T* dst, const Shape& shape, const std::vector<std::int64_t>& shifts,
               bool accumulate) {
  const int rank = static_cast<int>(shape.size());
  if (shape_numel(shape) == 0) return;
  if (rank == 0) {
    dst[0] = accumulate ? dst[0] + src[0] : src[0];
    return;
  }
  const auto strides = contiguous_strides(shape);
  const std::int64_t len = shape.back();
  const std::int64_t sh = shifts.back();
  const std::int64_t rows = shape_numel(shape) / len;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(rank - 1), 0);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t src_off = 0;
    for (int a = 0; a < rank - 1; ++a) {
      const auto ua = static_cast<std::size_t>(a);
      const std::int64_t si = ((idx[ua] - shifts[ua]) % shape[ua] + shape[ua]) % shape[ua];
      src_off += si * strides[ua];
    }
    T* d = dst + r * len;
    const T* s = src + src_off;
    for (std::int64_t i = 0; i < len; ++i) {
      const std::int64_t si = ((i - sh) % len + len) % len;
      d[i] = accumulate ? d[i] + s[si] : s[si];
    }
    for (int a = rank - 2; a >= 0; --a) {
      const auto ua = static_cast<std::size_t>(a);
      if (++idx[ua] < shape[ua]) break;
      idx[ua] = 0;
    }
  }
}

}  // namespace

Tensor roll(const Tensor& x, std::span<const std::int64_t> shifts) {
  if (static_cast<int>(shifts.size()) != x.rank())
    throw ShapeError("roll: expected " + std::to_string(x.rank()) + " shifts");
  std::vector<std::int64_t> sh(shifts.begin(), shifts.end());
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    roll_copy(x.data<T>(), out.mutable_data<T>(), x.shape(), sh, false);
  });
  if (rec) {
    current_tape().record(out, {x}, [x, sh](const Tensor& g) {
      std::vector<std::int64_t> back(sh.size());
      for (std::size_t i = 0; i < sh.size(); ++i) back[i] = -sh[i];
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        roll_copy(g.data<T>(), grad_buffer<T>(x), x.shape(), back, true);
      });
    });
  }
  return out;
}

Tensor upsample_nearest2(const Tensor& x) {
  if (x.rank() < 3) throw ShapeError("upsample_nearest2: need at least 3 axes, got " + shape_str(x.shape()));
  const int r = x.rank();
  const std::int64_t D = x.dim(r - 3), H = x.dim(r - 2), W = x.dim(r - 1);
  const std::int64_t planes = x.numel() / (D * H * W);
  Shape out_shape = x.shape();
  for (int i = r - 3; i < r; ++i) out_shape[static_cast<std::size_t>(i)] *= 2;
  const bool rec = should_record({&x});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.mutable_data<T>();
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < planes; ++p)
      for (std::int64_t z = 0; z < 2 * D; ++z)
        for (std::int64_t y = 0; y < 2 * H; ++y)
          for (std::int64_t xx = 0; xx < 2 * W; ++xx)
            po[((p * 2 * D + z) * 2 * H + y) * 2 * W + xx] = px[((p * D + z / 2) * H + y / 2) * W + xx / 2];
  });
  if (rec) {
    current_tape().record(out, {x}, [x, planes, D, H, W](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        T* dst = grad_buffer<T>(x);
#pragma omp parallel for schedule(static)
        for (std::int64_t p = 0; p < planes; ++p)
          for (std::int64_t z = 0; z < D; ++z)
            for (std::int64_t y = 0; y < H; ++y)
              for (std::int64_t xx = 0; xx < W; ++xx) {
                T acc = 0;
                for (int a = 0; a < 2; ++a)
                  for (int b = 0; b < 2; ++b)
                    for (int c = 0; c < 2; ++c)
                      acc += pg[((p * 2 * D + 2 * z + a) * 2 * H + 2 * y + b) * 2 * W + 2 * xx + c];
                dst[((p * D + z) * H + y) * W + xx] += acc;
              }
      });
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  require_same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2 || a.rank() != b.rank())
    throw ShapeError("matmul: operands need equal rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int r = a.rank();
  for (int i = 0; i < r - 2; ++i)
    if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)])
      throw ShapeError("matmul: batch extent mismatch on axis " + std::to_string(i) + " (" +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()) + ")");
  GemmShape gs;
  gs.m = trans_a ? a.dim(-1) : a.dim(-2);
  gs.k = trans_a ? a.dim(-2) : a.dim(-1);
  const std::int64_t kb = trans_b ? b.dim(-1) : b.dim(-2);
  gs.n = trans_b ? b.dim(-2) : b.dim(-1);
  if (kb != gs.k)
    throw ShapeError("matmul: inner extent mismatch (" + std::to_string(gs.k) + " vs " + std::to_string(kb) +
                     ") for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  gs.batch = a.numel() / (gs.m * gs.k == 0 ? 1 : gs.m * gs.k);
  if (gs.m * gs.k == 0) gs.batch = shape_numel(Shape(a.shape().begin(), a.shape().end() - 2));
  gs.trans_a = trans_a;
  gs.trans_b = trans_b;
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(gs.m);
  out_shape.push_back(gs.n);
  const bool rec = should_record({&a, &b});
  Tensor out = make_output(out_shape, a.dtype(), rec);
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::gemm(a.data<T>(), b.data<T>(), out.mutable_data<T>(), gs, false);
  });
  if (rec) {
    current_tape().record(out, {a, b}, [a, b, gs](const Tensor& g) {
      dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        if (a.requires_grad()) {
          GemmShape s;
          s.batch = gs.batch;
          if (!gs.trans_a) {
            // dA[m,k] = dC[m,n] op(B)^T
            s.m = gs.m; s.n = gs.k; s.k = gs.n;
            s.trans_a = false;
            s.trans_b = !gs.trans_b;
            kernels::gemm(pg, b.data<T>(), grad_buffer<T>(a), s, true);
          } else {
            // dA_stored[k,m] = op(B)[k,n] dC^T
            s.m = gs.k; s.n = gs.m; s.k = gs.n;
            s.trans_a = gs.trans_b;
            s.trans_b = true;
            kernels::gemm(b.data<T>(), pg, grad_buffer<T>(a), s, true);
          }
        }
        if (b.requires_grad()) {
          GemmShape s;
          s.batch = gs.batch;
          if (!gs.trans_b) {
            // dB[k,n] = op(A)^T dC
            s.m = gs.k; s.n = gs.n; s.k = gs.m;
            s.trans_a = !gs.trans_a;
            s.trans_b = false;
            kernels::gemm(a.data<T>(), pg, grad_buffer<T>(b), s, true);
          } else {
            // dB_stored[n,k] = dC^T op(A)
            s.m = gs.n; s.n = gs.k; s.k = gs.m;
            s.trans_a = true;
            s.trans_b = gs.trans_a;
            kernels::gemm(pg, a.data<T>(), grad_buffer<T>(b), s, true);
          }
        }
      });
    });
  }
  finish(out, "matmul");
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_same_dtype(x, w, "linear");
  require_rank(w, 2, "linear", "weight");
  if (x.rank() < 1 || x.dim(-1) != w.dim(1))
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()) +
                     " on the feature axis");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0)))
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  const std::int64_t in = w.dim(1), outf = w.dim(0);
  const std::int64_t rows = in == 0 ? 0 : x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = outf;
  const bool rec = should_record({&x, &w, &b});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    GemmShape s{1, rows, outf, in, false, true};
    T* po = out.mutable_data<T>();
    if (b.defined()) {
      const T* pb = b.data<T>();
      for (std::int64_t r = 0; r < rows; ++r) std::copy(pb, pb + outf, po + r * outf);
    }
    kernels::gemm(x.data<T>(), w.data<T>(), po, s, b.defined());
  });
  if (rec) {
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    current_tape().record(out, inputs, [x, w, b, rows, in, outf](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        if (x.requires_grad())
          kernels::gemm(pg, w.data<T>(), grad_buffer<T>(x), GemmShape{1, rows, in, outf, false, false}, true);
        if (w.requires_grad())
          kernels::gemm(pg, x.data<T>(), grad_buffer<T>(w), GemmShape{1, outf, in, rows, true, false}, true);
        if (b.defined() && b.requires_grad()) {
          T* gb = grad_buffer<T>(b);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t o = 0; o < outf; ++o) gb[o] += pg[r * outf + o];
        }
      });
    });
  }
  finish(out, "linear");
  return out;
}

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, const Conv3dOptions& opt) {
  require_same_dtype(x, w, "conv3d");
  require_rank(x, 5, "conv3d", "input");
  require_rank(w, 5, "conv3d", "weight");
  if (opt.groups < 1 || opt.stride < 1 || opt.dilation < 1 || opt.padding < 0)
    throw ShapeError("conv3d: groups, stride and dilation must be >= 1 and padding >= 0");
  if (x.dim(1) % opt.groups != 0)
    throw ShapeError("conv3d: input channels (axis 1) = " + std::to_string(x.dim(1)) +
                     " not divisible by groups = " + std::to_string(opt.groups));
  if (w.dim(0) % opt.groups != 0)
    throw ShapeError("conv3d: output channels (weight axis 0) = " + std::to_string(w.dim(0)) +
                     " not divisible by groups = " + std::to_string(opt.groups));
  if (w.dim(1) != x.dim(1) / opt.groups)
    throw ShapeError("conv3d: weight axis 1 = " + std::to_string(w.dim(1)) + " but input channels / groups = " +
                     std::to_string(x.dim(1) / opt.groups));
  if (w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4))
    throw ShapeError("conv3d: kernel must be cubic, got weight " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0)))
    throw ShapeError("conv3d: bias " + shape_str(b.shape()) + " does not match " + std::to_string(w.dim(0)) +
                     " output channels");
  ConvGeometry geo;
  geo.batch = x.dim(0);
  geo.in_channels = x.dim(1);
  geo.out_channels = w.dim(0);
  geo.groups = opt.groups;
  geo.kernel = w.dim(2);
  geo.stride = opt.stride;
  geo.dilation = opt.dilation;
  geo.padding = opt.padding;
  static const char* axis_names[] = {"depth (axis 2)", "height (axis 3)", "width (axis 4)"};
  for (int i = 0; i < 3; ++i) {
    geo.in_extent[static_cast<std::size_t>(i)] = x.dim(2 + i);
    const std::int64_t o = conv_out_extent(x.dim(2 + i), geo.kernel, geo.stride, geo.dilation, geo.padding);
    if (o < 1)
      throw ShapeError(std::string("conv3d: ") + axis_names[i] + " extent " + std::to_string(x.dim(2 + i)) +
                       " too small for the dilated kernel");
    geo.out_extent[static_cast<std::size_t>(i)] = o;
  }
  Shape out_shape{geo.batch, geo.out_channels, geo.out_extent[0], geo.out_extent[1], geo.out_extent[2]};
  const bool rec = should_record({&x, &w, &b});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::conv3d_forward(x.data<T>(), w.data<T>(), b.defined() ? b.data<T>() : nullptr, out.mutable_data<T>(),
                            geo);
  });
  if (rec) {
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    current_tape().record(out, inputs, [x, w, b, geo](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        if (x.requires_grad()) kernels::conv3d_backward_input(pg, w.data<T>(), grad_buffer<T>(x), geo);
        if (w.requires_grad()) kernels::conv3d_backward_weight(pg, x.data<T>(), grad_buffer<T>(w), geo);
        if (b.defined() && b.requires_grad()) kernels::conv3d_backward_bias(pg, grad_buffer<T>(b), geo);
      });
    });
  }
  finish(out, "conv3d");
  return out;
}

Tensor conv3d_transpose(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_same_dtype(x, w, "conv3d_transpose");
  require_rank(x, 5, "conv3d_transpose", "input");
  require_rank(w, 5, "conv3d_transpose", "weight");
  if (w.dim(0) != x.dim(1))
    throw ShapeError("conv3d_transpose: weight axis 0 = " + std::to_string(w.dim(0)) +
                     " but input channels (axis 1) = " + std::to_string(x.dim(1)));
  if (w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4))
    throw ShapeError("conv3d_transpose: kernel must be cubic, got weight " + shape_str(w.shape()));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(1)))
    throw ShapeError("conv3d_transpose: bias " + shape_str(b.shape()) + " does not match " +
                     std::to_string(w.dim(1)) + " output channels");
  const std::int64_t k = w.dim(2);
  // The adjoint of a stride-k, kernel-k convolution mapping Cout -> Cin channels.
  ConvGeometry geo;
  geo.batch = x.dim(0);
  geo.in_channels = w.dim(1);
  geo.out_channels = w.dim(0);
  geo.kernel = k;
  geo.stride = k;
  for (int i = 0; i < 3; ++i) {
    geo.out_extent[static_cast<std::size_t>(i)] = x.dim(2 + i);
    geo.in_extent[static_cast<std::size_t>(i)] = x.dim(2 + i) * k;
  }
  Shape out_shape{geo.batch, geo.in_channels, geo.in_extent[0], geo.in_extent[1], geo.in_extent[2]};
  const bool rec = should_record({&x, &w, &b});
  Tensor out = make_output(out_shape, x.dtype(), rec);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* po = out.mutable_data<T>();
    if (b.defined()) {
      const T* pb = b.data<T>();
      const std::int64_t plane = geo.in_plane();
      for (std::int64_t n = 0; n < geo.batch; ++n)
        for (std::int64_t c = 0; c < geo.in_channels; ++c)
          std::fill(po + (n * geo.in_channels + c) * plane, po + (n * geo.in_channels + c + 1) * plane, pb[c]);
    }
    kernels::conv3d_backward_input(x.data<T>(), w.data<T>(), po, geo);
  });
  if (rec) {
    std::vector<Tensor> inputs{x, w};
    if (b.defined()) inputs.push_back(b);
    current_tape().record(out, inputs, [x, w, b, geo](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* pg = g.data<T>();
        if (x.requires_grad()) {
          std::vector<T> tmp(static_cast<std::size_t>(x.numel()));
          kernels::conv3d_forward(pg, w.data<T>(), static_cast<const T*>(nullptr), tmp.data(), geo);
          T* dst = grad_buffer<T>(x);
          for (std::size_t i = 0; i < tmp.size(); ++i) dst[i] += tmp[i];
        }
        if (w.requires_grad()) kernels::conv3d_backward_weight(x.data<T>(), pg, grad_buffer<T>(w), geo);
        if (b.defined() && b.requires_grad()) {
          ConvGeometry bias_geo = geo;
          bias_geo.out_channels = geo.in_channels;
          bias_geo.out_extent = geo.in_extent;
          kernels::conv3d_backward_bias(pg, grad_buffer<T>(b), bias_geo);
        }
      });
    });
  }
  finish(out, "conv3d_transpose");
  return out;
}

Tensor instance_norm(const Tensor& x, double eps) {
  if (x.rank() < 3) throw ShapeError("instance_norm: expected [N, C, ...], got " + shape_str(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t plane = planes == 0 ? 0 : x.numel() / planes;
  if (plane < 1) throw ShapeError("instance_norm: empty spatial volume in " + shape_str(x.shape()));
  const bool rec = should_record({&x});
  Tensor out = make_output(x.shape(), x.dtype(), rec);
  Tensor rstd = Tensor::zeros({planes}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> mean(static_cast<std::size_t>(planes));
    kernels::instance_norm_forward(x.data<T>(), out.mutable_data<T>(), mean.data(), rstd.mutable_data<T>(), planes,
                                   plane, eps);
  });
  if (rec) {
    current_tape().record(out, {x}, [x, out, rstd, planes, plane](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels::instance_norm_backward(g.data<T>(), out.data<T>(), rstd.data<T>(), grad_buffer<T>(x), planes,
                                        plane);
      });
    });
  }
  finish(out, "instance_norm");
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_same_dtype(x, gamma, "layer_norm");
  require_same_dtype(x, beta, "layer_norm");
  if (x.rank() < 1) throw ShapeError("layer_norm: scalar input");
  const std::int64_t width = x.dim(-1);
  if (gamma.numel() != width || beta.numel() != width)
    throw ShapeError("layer_norm: gamma/beta of size " + std::to_string(gamma.numel()) + "/" +
                     std::to_string(beta.numel()) + " for feature axis of extent " + std::to_string(width));
  const std::int64_t rows = width == 0 ? 0 : x.numel() / width;
  const bool rec = should_record({&x, &gamma, &beta});
  Tensor out = make_output(x.shape(), x.dtype(), rec);
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  Tensor rstd = Tensor::zeros({rows}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    kernels::layer_norm_forward(x.data<T>(), gamma.data<T>(), beta.data<T>(), out.mutable_data<T>(),
                                xhat.mutable_data<T>(), rstd.mutable_data<T>(), rows, width, eps);
  });
  if (rec) {
    current_tape().record(out, {x, gamma, beta}, [x, gamma, beta, xhat, rstd, rows, width](const Tensor& g) {
      dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels::layer_norm_backward(g.data<T>(), xhat.data<T>(), rstd.data<T>(), gamma.data<T>(),
                                     x.requires_grad() ? grad_buffer<T>(x) : nullptr,
                                     gamma.requires_grad() ? grad_buffer<T>(gamma) : nullptr,
                                     beta.requires_grad() ? grad_buffer<T>(beta) : nullptr, rows, width);
      });
    });
  }
  finish(out, "layer_norm");
  return out;
}

}  // namespace glims
