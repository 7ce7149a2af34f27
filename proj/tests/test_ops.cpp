#include <cmath>
#include <numeric>

#include "doctest.h"
#include "glims/autograd.hpp"
#include "glims/gradcheck.hpp"
#include "glims/kernels.hpp"
#include "glims/ops.hpp"
#include "test_util.hpp"

using namespace glims;
using testing::dot;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

Tensor undefined;

void check_grad(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double tol = 1e-4) {
  const GradcheckResult r = gradcheck(f, std::move(inputs));
  INFO(r.worst);
  CHECK(r.max_rel_error < tol);
  CHECK(r.coords_checked > 0);
}

}  // namespace

TEST_CASE("conv3d counts a full all-ones support") {
  Tensor x = Tensor::full({1, 1, 4, 4, 4}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor y = conv3d(x, w, undefined, {.stride = 1, .dilation = 1, .padding = 1});
  CHECK(y.shape() == Shape{1, 1, 4, 4, 4});
  CHECK(y.at(1 * 16 + 1 * 4 + 1) == 27.0);
  CHECK(y.at(0) == 8.0);
}

TEST_CASE("dilated conv3d center sees 27 taps") {
  Tensor x = Tensor::full({1, 1, 5, 5, 5}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3, 3}, 1.0);
  Tensor y = conv3d(x, w, undefined, {.stride = 1, .dilation = 2, .padding = 2});
  CHECK(y.shape() == Shape{1, 1, 5, 5, 5});
  CHECK(y.at(2 * 25 + 2 * 5 + 2) == 27.0);
}

TEST_CASE("depthwise delta kernel is the identity") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 5, 4, 6}, rng, DType::f32);
  Tensor w = Tensor::zeros({3, 1, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w.set(c * 27 + 13, 1.0);
  for (std::int64_t d : {1, 2, 3}) {
    Tensor delta = Tensor::zeros({3, 1, 3, 3, 3});
    for (int c = 0; c < 3; ++c) delta.set(c * 27 + 13, 1.0);
    Tensor y = conv3d(x, delta, undefined, {.dilation = d, .padding = d, .groups = 3});
    CHECK(y.to_vector() == x.to_vector());
  }
}

TEST_CASE("conv3d output extent formula and errors") {
  CHECK(conv_out_extent(32, 2, 2, 1, 0) == 16);
  CHECK(conv_out_extent(7, 3, 2, 1, 1) == 4);
  CHECK(conv_out_extent(5, 3, 1, 3, 3) == 5);
  Tensor x = Tensor::zeros({1, 3, 4, 4, 4});
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({2, 1, 3, 3, 3}), undefined, {.padding = 1, .groups = 2}),
                  ShapeError);
  CHECK_THROWS_AS(conv3d(x, Tensor::zeros({2, 2, 3, 3, 3}), undefined, {.padding = 1}), ShapeError);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({2, 3, 1, 1, 1}), undefined, {}),
                  ShapeError);
  try {
    conv3d(Tensor::zeros({1, 1, 2, 8, 8}), Tensor::zeros({1, 1, 3, 3, 3}), undefined, {});
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("depth") != std::string::npos);
  }
}

TEST_CASE("transposed conv shapes and bias") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({1, 8, 3, 3, 3}, rng, DType::f32);
  Tensor w = random_tensor({8, 4, 2, 2, 2}, rng, DType::f32);
  CHECK(conv3d_transpose(x, w, undefined).shape() == Shape{1, 4, 6, 6, 6});
  Tensor b = Tensor::from_values({4}, {0.5, -1.0, 2.0, 3.0});
  Tensor y = conv3d_transpose(x, Tensor::zeros({8, 4, 2, 2, 2}), b);
  const auto v = y.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == b.at(static_cast<std::int64_t>(i / 216)));
  CHECK_THROWS_AS(conv3d_transpose(Tensor::zeros({8, 3, 3, 3}), w, undefined), ShapeError);
}

TEST_CASE("transposed conv is the adjoint of the strided conv") {
  std::mt19937_64 rng(5);
  Tensor w = random_tensor({3, 2, 2, 2, 2}, rng);  // Cin_t=3 -> Cout_t=2; conv maps 2 -> 3
  Tensor x = random_tensor({2, 2, 4, 6, 4}, rng);
  Tensor y = random_tensor({2, 3, 2, 3, 2}, rng);
  const double lhs = dot(conv3d(x, w, undefined, {.stride = 2}), y);
  const double rhs = dot(x, conv3d_transpose(y, w, undefined));
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("implemented backward maps are adjoints of linear ops") {
  std::mt19937_64 rng(6);
  auto adjoint_gap = [&](const std::function<Tensor(const Tensor&)>& op, const Shape& in_shape) {
    Tensor x = random_tensor(in_shape, rng);
    x.set_requires_grad(true);
    Tensor out = op(x);
    Tensor y = random_tensor(out.shape(), rng);
    const double lhs = dot(out.detach(), y);
    backward(sum(mul(out, y)));
    const double rhs = dot(x.detach(), x.grad());
    return std::abs(lhs - rhs);
  };
  Tensor w = random_tensor({4, 2, 3, 3, 3}, rng);
  Tensor wd = random_tensor({3, 1, 3, 3, 3}, rng);
  Tensor wl = random_tensor({5, 3}, rng);
  CHECK(adjoint_gap([&](const Tensor& x) { return conv3d(x, w, undefined, {.stride = 2, .padding = 1}); },
                    {1, 2, 5, 6, 4}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) { return conv3d(x, wd, undefined, {.dilation = 3, .padding = 3, .groups = 3}); },
                    {2, 3, 4, 5, 6}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) { return linear(x, wl, undefined); }, {2, 4, 3}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) { return permute(x, {0, 2, 3, 4, 1}); }, {1, 2, 3, 2, 2}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) {
          const std::int64_t s[] = {0, 1, -1};
          return roll(x, s);
        }, {2, 3, 4}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) { return upsample_nearest2(x); }, {1, 2, 2, 3, 2}) < 1e-5);
  CHECK(adjoint_gap([&](const Tensor& x) {
          const std::pair<std::int64_t, std::int64_t> p[] = {{0, 0}, {1, 2}, {0, 1}};
          return pad(x, p);
        }, {2, 3, 3}) < 1e-5);
}

TEST_CASE("instance norm statistics") {
  Tensor c = Tensor::full({1, 1, 2, 2, 2}, 5.0);
  for (double v : instance_norm(c).to_vector()) CHECK(v == 0.0);

  Tensor pm = Tensor::from_values({1, 1, 1, 1, 4}, {-1, 1, -1, 1}, DType::f64);
  const auto out = instance_norm(pm).to_vector();
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(pm.at(static_cast<std::int64_t>(i))).epsilon(1e-5));

  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 3, 4, 5, 6}, rng, DType::f32, -3, 7);
  Tensor y = instance_norm(x);
  const auto v = y.to_vector();
  for (int p = 0; p < 6; ++p) {
    double m = 0, s = 0;
    for (int i = 0; i < 120; ++i) m += v[static_cast<std::size_t>(p * 120 + i)];
    m /= 120;
    for (int i = 0; i < 120; ++i) s += std::pow(v[static_cast<std::size_t>(p * 120 + i)] - m, 2);
    s /= 120;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(s - 1) < 1e-4);
  }
}

TEST_CASE("layer norm examples") {
  Tensor x = Tensor::from_values({1, 2}, {2, 4}, DType::f64);
  Tensor g = Tensor::full({2}, 1.0, DType::f64);
  Tensor b = Tensor::zeros({2}, DType::f64);
  const auto y = layer_norm(x, g, b).to_vector();
  CHECK(y[0] == doctest::Approx(-1).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(1).epsilon(1e-5));
  Tensor beta = Tensor::from_values({2}, {0.3, -0.7}, DType::f64);
  CHECK(layer_norm(x, Tensor::zeros({2}, DType::f64), beta).to_vector() == beta.to_vector());
}

TEST_CASE("softmax and sigmoid values") {
  const auto s = softmax(Tensor::zeros({3}, DType::f64), 0).to_vector();
  for (double v : s) CHECK(v == doctest::Approx(1.0 / 3));
  CHECK(sigmoid(Tensor::zeros({1})).at(0) == 0.5);
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 5, 4}, rng, DType::f64, -30, 30);
  const auto p = softmax(x, 1).to_vector();
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i) {
      double total = 0;
      for (int a = 0; a < 5; ++a) {
        const double v = p[static_cast<std::size_t>((o * 5 + a) * 4 + i)];
        CHECK(v > 0);
        CHECK(v < 1);
        total += v;
      }
      CHECK(std::abs(total - 1) < 1e-6);
    }
}

TEST_CASE("shape op errors") {
  Tensor a = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(add(a, Tensor::zeros({4})), ShapeError);
  CHECK_THROWS_AS(softmax(a, 2), ShapeError);
  CHECK_THROWS_AS(concat({a, Tensor::zeros({3, 3})}, 1), ShapeError);
  const std::int64_t sizes[] = {1, 1};
  CHECK_THROWS_AS(split(a, 1, sizes), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(permute(a, {0, 0}), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
  CHECK_THROWS_AS(add(a, Tensor::zeros({2, 3}, DType::f64)), Error);
}

TEST_CASE("split and concat roundtrip") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 6, 3}, rng);
  const std::int64_t sizes[] = {1, 3, 2};
  auto parts = split(x, 1, sizes);
  CHECK(parts[1].shape() == Shape{2, 3, 3});
  CHECK(concat(parts, 1).to_vector() == x.to_vector());
}

TEST_CASE("roll follows the torus convention") {
  Tensor x = Tensor::from_values({4}, {1, 2, 3, 4});
  const std::int64_t s[] = {2};
  CHECK(roll(x, s).to_vector() == std::vector<double>{3, 4, 1, 2});
  const std::int64_t m[] = {-1};
  CHECK(roll(x, m).to_vector() == std::vector<double>{2, 3, 4, 1});
}

TEST_CASE("matmul agrees with a direct triple loop for all transpose modes") {
  std::mt19937_64 rng(10);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Tensor a = random_tensor(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
      Tensor b = random_tensor(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
      Tensor c = matmul(a, b, ta, tb);
      REQUIRE(c.shape() == Shape{2, 3, 5});
      for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 5; ++j) {
            double acc = 0;
            for (int k = 0; k < 4; ++k)
              acc += a.at(ta ? (n * 4 + k) * 3 + i : (n * 3 + i) * 4 + k) *
                     b.at(tb ? (n * 5 + j) * 4 + k : (n * 4 + k) * 5 + j);
            CHECK(c.at((n * 3 + i) * 5 + j) == doctest::Approx(acc).epsilon(1e-12));
          }
    }
}

TEST_CASE("OpenMP kernels match the serial reference") {
  std::mt19937_64 rng(11);
  for (std::int64_t groups : {1, 2}) {
    ConvGeometry g;
    g.batch = 2;
    g.in_channels = 4;
    g.out_channels = 6;
    g.groups = groups;
    g.kernel = 3;
    g.stride = 2;
    g.dilation = 2;
    g.padding = 2;
    g.in_extent = {7, 6, 5};
    for (int i = 0; i < 3; ++i) g.out_extent[static_cast<std::size_t>(i)] = conv_out_extent(g.in_extent[static_cast<std::size_t>(i)], 3, 2, 2, 2);
    Tensor x = random_tensor({g.batch, g.in_channels, 7, 6, 5}, rng);
    Tensor w = random_tensor({6, 4 / groups, 3, 3, 3}, rng);
    Tensor bias = random_tensor({6}, rng);
    Tensor gy = random_tensor({g.batch, 6, g.out_extent[0], g.out_extent[1], g.out_extent[2]}, rng);
    std::vector<double> y1(static_cast<std::size_t>(gy.numel())), y2(y1.size());
    kernels::conv3d_forward(x.data<double>(), w.data<double>(), bias.data<double>(), y1.data(), g);
    reference::conv3d_forward(x.data<double>(), w.data<double>(), bias.data<double>(), y2.data(), g);
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));

    std::vector<double> gx1(static_cast<std::size_t>(x.numel())), gx2(gx1.size());
    kernels::conv3d_backward_input(gy.data<double>(), w.data<double>(), gx1.data(), g);
    reference::conv3d_backward_input(gy.data<double>(), w.data<double>(), gx2.data(), g);
    for (std::size_t i = 0; i < gx1.size(); ++i) CHECK(gx1[i] == doctest::Approx(gx2[i]).epsilon(1e-12));

    std::vector<double> gw1(static_cast<std::size_t>(w.numel())), gw2(gw1.size());
    kernels::conv3d_backward_weight(gy.data<double>(), x.data<double>(), gw1.data(), g);
    reference::conv3d_backward_weight(gy.data<double>(), x.data<double>(), gw2.data(), g);
    for (std::size_t i = 0; i < gw1.size(); ++i) CHECK(gw1[i] == doctest::Approx(gw2[i]).epsilon(1e-12));
  }
  Tensor x = random_tensor({3, 40}, rng);
  std::vector<double> n1(120), n2(120), mean(3), rstd(3);
  kernels::instance_norm_forward(x.data<double>(), n1.data(), mean.data(), rstd.data(), 3, 40, 1e-5);
  reference::instance_norm_forward(x.data<double>(), n2.data(), 3, 40, 1e-5);
  for (std::size_t i = 0; i < 120; ++i) CHECK(n1[i] == doctest::Approx(n2[i]).epsilon(1e-12));
  kernels::softmax_forward(x.data<double>(), n1.data(), 3, 8, 5);
  reference::softmax_forward(x.data<double>(), n2.data(), 3, 8, 5);
  for (std::size_t i = 0; i < 120; ++i) CHECK(n1[i] == doctest::Approx(n2[i]).epsilon(1e-12));
}

TEST_CASE("kernels give identical results for any thread count") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({2, 4, 9, 8, 7}, rng, DType::f32);
  Tensor w = random_tensor({8, 4, 3, 3, 3}, rng, DType::f32);
  const int saved = num_threads();
  set_num_threads(1);
  const auto a = conv3d(x, w, undefined, {.padding = 1}).to_vector();
  set_num_threads(3);
  const auto b = conv3d(x, w, undefined, {.padding = 1}).to_vector();
  set_num_threads(saved);
  CHECK(a == b);
}

TEST_CASE("gradcheck of every op on small random inputs") {
  std::mt19937_64 rng(13);
  auto r = [&](const Shape& s, double lo = -1, double hi = 1) { return random_tensor(s, rng, DType::f64, lo, hi); };

  SUBCASE("binary broadcasting") {
    Tensor a = r({2, 3, 1}), b = r({1, 4});
    check_grad([&] { return add(a, b); }, {a, b});
    check_grad([&] { return sub(a, b); }, {a, b});
    check_grad([&] { return mul(a, b); }, {a, b});
    Tensor c = r({4}), d = r({4});
    check_grad([&] { return mul(c, d); }, {c, d});
  }
  SUBCASE("unary") {
    Tensor x = r({4});
    check_grad([&] { return scale(x, -1.7); }, {x});
    check_grad([&] { return add_scalar(x, 0.3); }, {x});
    check_grad([&] { return sigmoid(x); }, {x});
    check_grad([&] { return gelu(x); }, {x});
    check_grad([&] { return glims::exp(x); }, {x});
    Tensor pos = r({4}, 0.5, 2.0);
    check_grad([&] { return glims::log(pos); }, {pos});
    check_grad([&] { return reciprocal(pos); }, {pos});
    Tensor away = Tensor::from_values({4}, {-0.8, -0.2, 0.3, 0.9}, DType::f64);
    check_grad([&] { return leaky_relu(away); }, {away});
  }
  SUBCASE("softmax") {
    Tensor x = r({2, 3, 2});
    check_grad([&] { return softmax(x, 1); }, {x});
    check_grad([&] { return softmax(x, -1); }, {x});
  }
  SUBCASE("reductions") {
    Tensor x = r({2, 3, 4});
    const int axes[] = {0, 2};
    check_grad([&] { return sum(x); }, {x});
    check_grad([&] { return sum(x, axes, true); }, {x});
    check_grad([&] { return mean(x, axes, false); }, {x});
    check_grad([&] { return amax(x, axes, true); }, {x});
    check_grad([&] { return max_over_axis(x, 1); }, {x});
    check_grad([&] { return mean_over_axis(x, 1); }, {x});
    Tensor v = r({1, 2, 2, 1, 2});
    check_grad([&] { return max_pool_global(v); }, {v});
    check_grad([&] { return avg_pool_global(v); }, {v});
  }
  SUBCASE("shape ops") {
    Tensor a = r({2, 2}), b = r({2, 1});
    check_grad([&] { return concat({a, b}, 1); }, {a, b});
    Tensor x = r({2, 4});
    const std::int64_t sizes[] = {1, 3};
    check_grad([&] { return split(x, 1, sizes)[1]; }, {x});
    check_grad([&] { return slice(x, 1, 1, 2); }, {x});
    check_grad([&] { return reshape(x, {4, 2}); }, {x});
    Tensor p = r({2, 3, 2});
    check_grad([&] { return permute(p, {2, 0, 1}); }, {p});
    const std::int64_t shifts[] = {1, -1, 1};
    check_grad([&] { return roll(p, shifts); }, {p});
    const std::pair<std::int64_t, std::int64_t> widths[] = {{1, 0}, {0, 2}, {1, 1}};
    check_grad([&] { return pad(p, widths); }, {p});
    const std::int64_t starts[] = {1, 0, 1}, extents[] = {1, 2, 1};
    check_grad([&] { return crop(p, starts, extents); }, {p});
    Tensor u = r({1, 1, 1, 2, 2});
    check_grad([&] { return upsample_nearest2(u); }, {u});
  }
  SUBCASE("linear algebra") {
    Tensor a = r({2, 3}), b = r({3, 2});
    check_grad([&] { return matmul(a, b); }, {a, b});
    Tensor at = r({3, 2}), bt = r({2, 3});
    check_grad([&] { return matmul(at, bt, true, true); }, {at, bt});
    check_grad([&] { return matmul(a, bt, false, true); }, {a, bt});
    check_grad([&] { return matmul(at, b, true, false); }, {at, b});
    Tensor x = r({2, 3}), w = r({2, 3}), bias = r({2});
    check_grad([&] { return linear(x, w, bias); }, {x, w, bias});
  }
  SUBCASE("convolutions") {
    Tensor x = r({1, 2, 3, 3, 3}), w = r({2, 2, 3, 3, 3}), b = r({2});
    check_grad([&] { return conv3d(x, w, b, {.padding = 1}); }, {x, w, b});
    Tensor wd = r({2, 1, 3, 3, 3});
    check_grad([&] { return conv3d(x, wd, undefined, {.dilation = 2, .padding = 2, .groups = 2}); }, {x, wd});
    Tensor xs = r({1, 2, 4, 4, 4}), ws = r({3, 2, 2, 2, 2});
    Tensor bs = r({3});
    check_grad([&] { return conv3d(xs, ws, bs, {.stride = 2}); }, {xs, ws, bs});
    Tensor xt = r({1, 2, 2, 2, 2}), wt = r({2, 3, 2, 2, 2}), bt = r({3});
    check_grad([&] { return conv3d_transpose(xt, wt, bt); }, {xt, wt, bt});
  }
  SUBCASE("normalization") {
    Tensor x = r({1, 2, 2, 2, 1});
    check_grad([&] { return instance_norm(x); }, {x});
    Tensor t = r({3, 4}), g = r({4}), b = r({4});
    check_grad([&] { return layer_norm(t, g, b); }, {t, g, b});
  }
}
