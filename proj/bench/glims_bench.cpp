// Serial reference kernels against the OpenMP kernels on layer-sized inputs.
// The OpenMP cases take the thread count as their argument; each case also
// reports the largest absolute difference from the reference output.

#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "glims/kernels.hpp"

using namespace glims;

namespace {

std::vector<float> random_vector(std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

ConvGeometry dense_conv() {
  ConvGeometry g;
  g.in_channels = 24;
  g.out_channels = 48;
  g.in_extent = g.out_extent = {24, 24, 24};
  g.kernel = 3;
  g.padding = 1;
  return g;
}

ConvGeometry depthwise_dilated() {
  ConvGeometry g;
  g.in_channels = g.out_channels = g.groups = 48;
  g.in_extent = g.out_extent = {32, 32, 32};
  g.kernel = 3;
  g.dilation = 3;
  g.padding = 3;
  return g;
}

struct ConvData {
  ConvGeometry g;
  std::vector<float> x, w, b;
  std::vector<float> y;

  explicit ConvData(const ConvGeometry& geom) : g(geom) {
    x = random_vector(static_cast<std::size_t>(g.batch * g.in_channels * g.in_plane()), 1);
    w = random_vector(static_cast<std::size_t>(g.out_channels * (g.in_channels / g.groups) * 27), 2);
    b = random_vector(static_cast<std::size_t>(g.out_channels), 3);
    y.resize(static_cast<std::size_t>(g.batch * g.out_channels * g.out_plane()));
  }
  std::vector<float> reference_output() {
    std::vector<float> r(y.size());
    reference::conv3d_forward(x.data(), w.data(), b.data(), r.data(), g);
    return r;
  }
};

template <ConvGeometry (*Make)()>
void BM_conv_reference(benchmark::State& state) {
  ConvData d(Make());
  for (auto _ : state) {
    reference::conv3d_forward(d.x.data(), d.w.data(), d.b.data(), d.y.data(), d.g);
    benchmark::DoNotOptimize(d.y.data());
  }
}

template <ConvGeometry (*Make)()>
void BM_conv_openmp(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  ConvData d(Make());
  for (auto _ : state) {
    kernels::conv3d_forward(d.x.data(), d.w.data(), d.b.data(), d.y.data(), d.g);
    benchmark::DoNotOptimize(d.y.data());
  }
  state.counters["max_abs_diff"] = max_diff(d.y, d.reference_output());
}

// Token projection of a Swin stage: [tokens, C] x [C, 3C]^T.
constexpr GemmShape kGemm{1, 4096, 576, 192, false, true};

struct GemmData {
  std::vector<float> a = random_vector(static_cast<std::size_t>(kGemm.m * kGemm.k), 4);
  std::vector<float> b = random_vector(static_cast<std::size_t>(kGemm.n * kGemm.k), 5);
  std::vector<float> c = std::vector<float>(static_cast<std::size_t>(kGemm.m * kGemm.n));
};

void BM_gemm_reference(benchmark::State& state) {
  GemmData d;
  for (auto _ : state) {
    reference::gemm(d.a.data(), d.b.data(), d.c.data(), kGemm, false);
    benchmark::DoNotOptimize(d.c.data());
  }
}

void BM_gemm_openmp(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  GemmData d;
  for (auto _ : state) {
    kernels::gemm(d.a.data(), d.b.data(), d.c.data(), kGemm, false);
    benchmark::DoNotOptimize(d.c.data());
  }
  std::vector<float> r(d.c.size());
  reference::gemm(d.a.data(), d.b.data(), r.data(), kGemm, false);
  state.counters["max_abs_diff"] = max_diff(d.c, r);
}

constexpr std::int64_t kPlanes = 48, kPlane = 32 * 32 * 32;

void BM_instance_norm_reference(benchmark::State& state) {
  const auto x = random_vector(static_cast<std::size_t>(kPlanes * kPlane), 6);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    reference::instance_norm_forward(x.data(), y.data(), kPlanes, kPlane, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_instance_norm_openmp(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  const auto x = random_vector(static_cast<std::size_t>(kPlanes * kPlane), 6);
  std::vector<float> y(x.size()), mean(kPlanes), rstd(kPlanes);
  for (auto _ : state) {
    kernels::instance_norm_forward(x.data(), y.data(), mean.data(), rstd.data(), kPlanes, kPlane, 1e-5);
    benchmark::DoNotOptimize(y.data());
  }
  std::vector<float> r(y.size());
  reference::instance_norm_forward(x.data(), r.data(), kPlanes, kPlane, 1e-5);
  state.counters["max_abs_diff"] = max_diff(y, r);
}

// Attention scores: 64 windows x 4 heads, 343 x 343 each.
constexpr std::int64_t kRows = 64 * 4 * 343, kWidth = 343;

void BM_softmax_reference(benchmark::State& state) {
  const auto x = random_vector(static_cast<std::size_t>(kRows * kWidth), 7);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    reference::softmax_forward(x.data(), y.data(), kRows, kWidth, 1);
    benchmark::DoNotOptimize(y.data());
  }
}

void BM_softmax_openmp(benchmark::State& state) {
  set_num_threads(static_cast<int>(state.range(0)));
  const auto x = random_vector(static_cast<std::size_t>(kRows * kWidth), 7);
  std::vector<float> y(x.size());
  for (auto _ : state) {
    kernels::softmax_forward(x.data(), y.data(), kRows, kWidth, 1);
    benchmark::DoNotOptimize(y.data());
  }
  std::vector<float> r(y.size());
  reference::softmax_forward(x.data(), r.data(), kRows, kWidth, 1);
  state.counters["max_abs_diff"] = max_diff(y, r);
}

void thread_counts(benchmark::internal::Benchmark* b) {
  const int hw = std::max(1, num_threads());
  for (int t = 1; t < hw; t *= 2) b->Arg(t);
  b->Arg(hw);
}

}  // namespace

BENCHMARK(BM_conv_reference<dense_conv>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_openmp<dense_conv>)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_conv_reference<depthwise_dilated>)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv_openmp<depthwise_dilated>)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_gemm_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_gemm_openmp)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_instance_norm_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_instance_norm_openmp)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_softmax_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_softmax_openmp)->Apply(thread_counts)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
