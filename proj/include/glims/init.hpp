#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "glims/tensor.hpp"

namespace glims {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// Deterministic parameter factory. Every tensor it returns is a leaf that
/// requires a gradient.
class Initializer {
 public:
  Initializer(std::uint64_t seed, DType dtype) : rng_(seed), dtype_(dtype) {}

  DType dtype() const { return dtype_; }

  /// Normal with std sqrt(2 / fan_in).
  Tensor kaiming(const Shape& shape, std::int64_t fan_in);
  /// Normal truncated to two standard deviations by resampling.
  Tensor trunc_normal(const Shape& shape, double std = 0.02);
  Tensor zeros(const Shape& shape);
  Tensor ones(const Shape& shape);

 private:
  Tensor make(const Shape& shape, const std::vector<double>& values);

  std::mt19937_64 rng_;
  DType dtype_;
};

}  // namespace glims
