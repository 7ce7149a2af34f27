#include "glims/tensor.hpp"

#include <cmath>
#include <sstream>

#include "glims/autograd.hpp"

namespace glims {

const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Buffer::Buffer(DType dt, std::size_t n) : dtype_(dt) {
  if (dt == DType::f32)
    values_ = std::vector<float>(n, 0.0f);
  else
    values_ = std::vector<double>(n, 0.0);
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, values_);
}

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, DType dt) {
  for (auto e : shape)
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->dtype = dt;
  impl->data = std::make_shared<Buffer>(dt, static_cast<std::size_t>(shape_numel(shape)));
  impl->shape = std::move(shape);
  return impl;
}

bool g_finite_check = false;

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dt) { return Tensor(new_impl(std::move(shape), dt)); }

Tensor Tensor::full(Shape shape, double value, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    T* p = t.mutable_data<T>();
    for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (static_cast<std::int64_t>(values.size()) != t.numel())
    throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(t.shape()));
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    T* p = t.mutable_data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) p[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dt) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dt);
}

Tensor Tensor::scalar(double value, DType dt) { return full({}, value, dt); }

std::int64_t Tensor::dim(int axis) const {
  return impl_->shape[static_cast<std::size_t>(normalize_axis(axis, rank(), "dim"))];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return {};
  auto g = std::make_shared<TensorImpl>();
  g->shape = impl_->shape;
  g->dtype = impl_->dtype;
  g->data = impl_->grad;
  return Tensor(std::move(g));
}

void Tensor::zero_grad() {
  impl_->grad = std::make_shared<Buffer>(impl_->dtype, impl_->data->size());
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::int64_t i) const {
  return dispatch(dtype(), [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data<T>()[i]);
  });
}

void Tensor::set(std::int64_t i, double value) {
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    mutable_data<T>()[i] = static_cast<T>(value);
  });
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  dispatch(dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = data<T>();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
  });
  return out;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = impl_->dtype;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

Tensor Tensor::to(DType dt) const {
  Tensor out = zeros(shape(), dt);
  out.copy_from(*this);
  return out;
}

void Tensor::copy_from(const Tensor& src) {
  if (src.shape() != shape())
    throw ShapeError("copy_from: shape " + shape_str(src.shape()) + " into " +
                     shape_str(shape()));
  dispatch(dtype(), [&](auto dst_tag) {
    using D = decltype(dst_tag);
    D* dst = mutable_data<D>();
    dispatch(src.dtype(), [&](auto src_tag) {
      using S = decltype(src_tag);
      const S* s = src.data<S>();
      for (std::int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<D>(s[i]);
    });
  });
}

void set_finite_check(bool enabled) { g_finite_check = enabled; }
bool finite_check_enabled() { return g_finite_check; }

void check_finite(const Tensor& t, const char* op_name) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* p = t.data<T>();
    for (std::int64_t i = 0; i < t.numel(); ++i)
      if (!std::isfinite(p[i]))
        throw NumericError(std::string(op_name) + ": non-finite value at flat index " +
                           std::to_string(i));
  });
}

int normalize_axis(int axis, int rank, const char* op_name) {
  int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw ShapeError(std::string(op_name) + ": axis " + std::to_string(axis) +
                     " out of range for rank " + std::to_string(rank));
  return a;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape t_tape;
thread_local bool t_grad_enabled = true;
}  // namespace

Tape& current_tape() { return t_tape; }
bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void Tape::record(const Tensor& output, std::vector<Tensor> inputs, BackwardFn fn) {
  output.impl()->is_leaf = false;
  entries_.push_back(Entry{output, std::move(inputs), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  dispatch(loss.dtype(), [&](auto tag) {
    using T = decltype(tag);
    grad_buffer<T>(loss)[0] += T(1);
  });
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    // Reachable leaves get a (possibly zero) gradient buffer.
    for (const auto& in : it->inputs)
      if (in.requires_grad() && in.is_leaf() && !in.has_grad()) in.impl()->grad =
          std::make_shared<Buffer>(in.dtype(), static_cast<std::size_t>(in.numel()));
    if (!it->output.has_grad()) continue;
    it->fn(it->output.grad());
  }
  entries_.clear();
}

void backward(const Tensor& loss) { current_tape().backward(loss); }

}  // namespace glims
