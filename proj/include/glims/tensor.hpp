#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace glims {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents, ranks or axes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in a computation that requires finite ones.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File-format and filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class DType : std::uint8_t { f32, f64 };

const char* dtype_name(DType dt);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Calls f with a value of the scalar type matching dt.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f32) return f(float{});
  return f(double{});
}

/// Flat zero-initialized numeric buffer of one dtype.
class Buffer {
 public:
  Buffer(DType dt, std::size_t n);

  DType dtype() const { return dtype_; }
  std::size_t size() const;

  template <class T>
  T* as() {
    return std::get<std::vector<T>>(values_).data();
  }
  template <class T>
  const T* as() const {
    return std::get<std::vector<T>>(values_).data();
  }

 private:
  DType dtype_;
  std::variant<std::vector<float>, std::vector<double>> values_;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  std::shared_ptr<Buffer> data;
  std::shared_ptr<Buffer> grad;
  bool requires_grad = false;
  // False for values produced by a recorded op.
  bool is_leaf = true;
};

/// Dense row-major array handle. Copies share the underlying storage.
///
/// Feature maps use the layout [batch, channel, depth, height, width] with the
/// last index varying fastest. Values are treated as immutable once an op has
/// produced them; only optimizers and checkpoint loading write parameters in
/// place, and only gradients accumulate.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dt = DType::f32);
  static Tensor full(Shape shape, double value, DType dt = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dt = DType::f32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dt = DType::f32);
  static Tensor scalar(double value, DType dt = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  /// Extent along axis; negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return shape_numel(impl_->shape); }
  DType dtype() const { return impl_->dtype; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return impl_->is_leaf; }

  bool has_grad() const { return impl_->grad != nullptr; }
  /// Gradient as a detached tensor sharing the gradient buffer.
  Tensor grad() const;
  void zero_grad();
  void clear_grad() { impl_->grad.reset(); }

  template <class T>
  const T* data() const {
    return impl_->data->as<T>();
  }
  /// Direct write access; bypasses the tape.
  template <class T>
  T* mutable_data() {
    return impl_->data->as<T>();
  }

  double item() const;
  double at(std::int64_t flat_index) const;
  void set(std::int64_t flat_index, double value);
  std::vector<double> to_vector() const;

  /// Same storage, cut from the tape, no gradient requirement.
  Tensor detach() const;
  /// Fresh copy of the data in the requested dtype (a leaf).
  Tensor to(DType dt) const;
  Tensor clone() const { return to(dtype()); }

  /// Overwrites this tensor's values with src's (same shape; dtype converted).
  void copy_from(const Tensor& src);

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// When enabled, every op output is scanned and a NumericError is thrown on the
/// first NaN or Inf.
void set_finite_check(bool enabled);
bool finite_check_enabled();
void check_finite(const Tensor& t, const char* op_name);

/// Normalizes a possibly negative axis for the given rank.
int normalize_axis(int axis, int rank, const char* op_name);

}  // namespace glims
