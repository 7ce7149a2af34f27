#include <cmath>

#include "doctest.h"
#include "glims/autograd.hpp"
#include "glims/ops.hpp"
#include "test_util.hpp"

using namespace glims;

TEST_CASE("tensor storage and shape bookkeeping") {
  Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(-1) == 4);
  CHECK(t.dtype() == DType::f32);
  t.set(5, 2.5);
  CHECK(t.at(5) == 2.5);
  Tensor d = t.to(DType::f64);
  CHECK(d.dtype() == DType::f64);
  CHECK(d.at(5) == 2.5);
  CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(t.dim(3), ShapeError);
}

TEST_CASE("backward of sum gives ones") {
  Tensor x = Tensor::from_values({3}, {1.0, -2.0, 4.0}, DType::f64);
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK(x.grad().to_vector() == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of sum of squares gives 2x") {
  Tensor x = Tensor::from_values({4}, {1.0, -2.0, 0.5, 3.0}, DType::f64);
  x.set_requires_grad(true);
  backward(sum(mul(x, x)));
  const auto g = x.grad().to_vector();
  for (int i = 0; i < 4; ++i) CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(2 * x.at(i)));
}

TEST_CASE("gradients accumulate across multiple uses") {
  Tensor x = Tensor::from_values({2}, {1.5, -0.5}, DType::f64);
  x.set_requires_grad(true);
  backward(sum(add(add(x, x), scale(x, 3.0))));
  CHECK(x.grad().to_vector() == std::vector<double>{5, 5});
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, DType::f64);
  x.set_requires_grad(true);
  Tensor y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), ShapeError);
  current_tape().clear();
}

TEST_CASE("reachable leaf without gradient flow gets a zero gradient") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, DType::f64);
  Tensor w = Tensor::from_values({2}, {0.0, 0.0}, DType::f64);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  Tensor parts = concat({x, w}, 0);
  Tensor kept = slice(parts, 0, 0, 2);
  backward(sum(kept));
  REQUIRE(w.has_grad());
  CHECK(w.grad().to_vector() == std::vector<double>{0, 0});
  CHECK(x.grad().to_vector() == std::vector<double>{1, 1});
}

TEST_CASE("no-grad guard suppresses recording") {
  Tensor x = Tensor::from_values({2}, {1.0, 2.0}, DType::f64);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(current_tape().size() == 0);
  }
  CHECK(grad_enabled());
}

TEST_CASE("finite check flags NaN producers") {
  set_finite_check(true);
  Tensor x = Tensor::from_values({2}, {-1.0, 1.0}, DType::f64);
  CHECK_THROWS_AS(glims::log(x), NumericError);
  set_finite_check(false);
  CHECK_NOTHROW(glims::log(x));
}

TEST_CASE("identical seeds give identical random tensors") {
  std::mt19937_64 a(5), b(5);
  Tensor ta = testing::random_tensor({3, 3}, a, DType::f32);
  Tensor tb = testing::random_tensor({3, 3}, b, DType::f32);
  CHECK(ta.to_vector() == tb.to_vector());
}
