#include "glims/init.hpp"

#include <cmath>

namespace glims {

Tensor Initializer::make(const Shape& shape, const std::vector<double>& values) {
  Tensor t = Tensor::from_values(shape, values, dtype_);
  t.set_requires_grad(true);
  return t;
}

Tensor Initializer::kaiming(const Shape& shape, std::int64_t fan_in) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1))));
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = normal(rng_);
  return make(shape, v);
}

Tensor Initializer::trunc_normal(const Shape& shape, double std) {
  std::normal_distribution<double> normal;
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double z;
    do {
      z = normal(rng_);
    } while (std::abs(z) > 2.0);
    x = z * std;
  }
  return make(shape, v);
}

Tensor Initializer::zeros(const Shape& shape) {
  return make(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 0.0));
}

Tensor Initializer::ones(const Shape& shape) {
  return make(shape, std::vector<double>(static_cast<std::size_t>(shape_numel(shape)), 1.0));
}

}  // namespace glims
