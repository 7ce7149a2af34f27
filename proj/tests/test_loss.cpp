#include <cmath>
#include <random>

#include "doctest.h"
#include "glims/autograd.hpp"
#include "glims/gradcheck.hpp"
#include "glims/loss.hpp"
#include "glims/ops.hpp"
#include "test_util.hpp"

using namespace glims;
using testing::random_tensor;

namespace {

LabelMap random_labels(const Shape& shape, int classes, std::mt19937_64& rng) {
  LabelMap l{shape, std::vector<std::uint8_t>(static_cast<std::size_t>(shape_numel(shape)))};
  std::uniform_int_distribution<int> u(0, classes - 1);
  for (auto& v : l.ids) v = static_cast<std::uint8_t>(u(rng));
  return l;
}

// Direct evaluation of the objective on plain arrays.
double brute_loss(const Tensor& logits, const LabelMap& labels, double eps) {
  const auto x = logits.to_vector();
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  const std::int64_t plane = logits.numel() / (n * k);
  std::vector<double> inter(static_cast<std::size_t>(k)), ysum(inter.size()), psq(inter.size());
  double ce = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < plane; ++i) {
      double mx = -1e300;
      for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, x[static_cast<std::size_t>((b * k + c) * plane + i)]);
      double z = 0;
      for (std::int64_t c = 0; c < k; ++c) z += std::exp(x[static_cast<std::size_t>((b * k + c) * plane + i)] - mx);
      for (std::int64_t c = 0; c < k; ++c) {
        const double p = std::exp(x[static_cast<std::size_t>((b * k + c) * plane + i)] - mx) / z;
        const double y = labels.ids[static_cast<std::size_t>(b * plane + i)] == c ? 1.0 : 0.0;
        inter[static_cast<std::size_t>(c)] += y * p;
        ysum[static_cast<std::size_t>(c)] += y * y;
        psq[static_cast<std::size_t>(c)] += p * p;
        ce -= y * std::log((p + eps) / (1 + eps));
      }
    }
  double ratio = 0;
  for (std::size_t c = 0; c < inter.size(); ++c) ratio += inter[c] / (ysum[c] + psq[c] + eps);
  return 1.0 - 2.0 / static_cast<double>(k) * ratio + ce / static_cast<double>(n * plane);
}

}  // namespace

TEST_CASE("uniform two-class prediction on a single-class volume") {
  const Shape s{1, 2, 4, 4, 4};
  LabelMap l{{1, 4, 4, 4}, std::vector<std::uint8_t>(64, 0)};
  for (DType dt : {DType::f32, DType::f64}) {
    const LossValue v = dice_ce_loss(Tensor::zeros(s, dt), l);
    CHECK(v.dice == doctest::Approx(0.6).epsilon(1e-5));
    CHECK(v.ce == doctest::Approx(std::log(2.0)).epsilon(1e-4));
    CHECK(std::abs(v.loss.item() - 1.2931) < 1e-3);
  }
}

TEST_CASE("loss vanishes for confident correct logits") {
  std::mt19937_64 rng(3);
  const LabelMap l = random_labels({2, 4, 4, 4}, 4, rng);
  Tensor logits = Tensor::zeros({2, 4, 4, 4, 4}, DType::f64);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 64; ++i) logits.set((b * 4 + l.ids[static_cast<std::size_t>(b * 64 + i)]) * 64 + i, 15.0);
  const LossValue v = dice_ce_loss(logits, l);
  CHECK(v.loss.item() >= 0.0);
  CHECK(v.loss.item() < 1e-3);
}

TEST_CASE("loss matches direct evaluation and stays non-negative") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap l = random_labels({2, 2, 3, 4}, 3, rng);
    Tensor logits = random_tensor({2, 3, 2, 3, 4}, rng, DType::f64, -4, 4);
    const double got = dice_ce_loss(logits, l).loss.item();
    CHECK(got == doctest::Approx(brute_loss(logits, l, 1e-5)).epsilon(1e-12));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("unnormalized cross-entropy and dice-only variants") {
  std::mt19937_64 rng(5);
  const LabelMap l = random_labels({1, 2, 2, 2}, 2, rng);
  Tensor logits = random_tensor({1, 2, 2, 2, 2}, rng);
  const LossValue base = dice_ce_loss(logits, l);
  const LossValue raw = dice_ce_loss(logits, l, {.normalize_ce = false});
  CHECK(raw.ce == doctest::Approx(base.ce * 8).epsilon(1e-12));
  const LossValue dice = dice_ce_loss(logits, l, {.dice_only = true});
  CHECK(dice.loss.item() == doctest::Approx(base.dice).epsilon(1e-12));
}

TEST_CASE("labels outside the class range are rejected") {
  LabelMap l{{1, 2, 2, 2}, std::vector<std::uint8_t>(8, 0)};
  l.ids[5] = 4;
  CHECK_THROWS_AS(dice_ce_loss(Tensor::zeros({1, 4, 2, 2, 2}), l), ConfigError);
  l.ids[5] = 3;
  CHECK_NOTHROW(dice_ce_loss(Tensor::zeros({1, 4, 2, 2, 2}), l));
  CHECK_THROWS_AS(dice_ce_loss(Tensor::zeros({1, 4, 2, 2, 3}), l), ShapeError);
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(17);
  const LabelMap l = random_labels({2, 2, 3, 2}, 3, rng);
  Tensor logits = random_tensor({2, 3, 2, 3, 2}, rng, DType::f64, -2, 2);
  logits.set_requires_grad();
  for (bool dice_only : {false, true}) {
    const auto r = gradcheck([&] { return dice_ce_loss(logits, l, {.dice_only = dice_only}).loss; }, {logits});
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("deep supervision weights halve per level") {
  const auto w = deep_supervision_weights(4);
  REQUIRE(w.size() == 4);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == 0.5);
  CHECK(w[2] == 0.25);
  CHECK(w[3] == 0.125);
  const double same[] = {0.7, 0.7, 0.7, 0.7};
  CHECK(weighted_total(same) == doctest::Approx(1.875 * 0.7).epsilon(1e-15));
  const double aux_only[] = {0.0, 0.8, 0.4, 0.2};
  CHECK(weighted_total(aux_only) == doctest::Approx(0.525).epsilon(1e-15));
}

TEST_CASE("raising any single level strictly raises the combined loss") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> l{u(rng), u(rng), u(rng), u(rng)};
    const double base = weighted_total(l);
    for (std::size_t i = 0; i < l.size(); ++i) {
      auto bumped = l;
      bumped[i] += 1e-3;
      CHECK(weighted_total(bumped) > base);
    }
  }
}

TEST_CASE("nearest downsampling picks the centre-left voxel of each block") {
  LabelMap l{{1, 4, 4, 4}, std::vector<std::uint8_t>(64)};
  for (std::size_t i = 0; i < 64; ++i) l.ids[i] = static_cast<std::uint8_t>(i);
  const LabelMap d2 = downsample_labels(l, 2);
  CHECK(d2.shape == Shape{1, 2, 2, 2});
  CHECK(d2.ids[0] == 0);
  CHECK(d2.ids[7] == (2 * 4 + 2) * 4 + 2);
  const LabelMap d4 = downsample_labels(l, 4);
  CHECK(d4.ids[0] == (1 * 4 + 1) * 4 + 1);
  CHECK_THROWS_AS(downsample_labels(LabelMap{{1, 3, 4, 4}, std::vector<std::uint8_t>(48)}, 2), ShapeError);
}

TEST_CASE("deep supervision report matches per-level recomputation") {
  std::mt19937_64 rng(23);
  const LabelMap l = random_labels({1, 8, 8, 8}, 3, rng);
  std::vector<Tensor> levels;
  for (std::int64_t e : {8, 4, 2, 1}) levels.push_back(random_tensor({1, 3, e, e, e}, rng));
  LossReport rep;
  const Tensor total = deep_supervision_loss(levels, l, rep);
  REQUIRE(rep.per_level.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = dice_ce_loss(levels[i], downsample_labels(l, std::int64_t{1} << i)).loss.item();
    CHECK(rep.per_level[i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(std::abs(rep.total - weighted_total(rep.per_level)) < 1e-6);
  CHECK(std::abs(rep.total - total.item()) < 1e-6);
  CHECK(std::abs(rep.total - (rep.dice_term + rep.ce_term)) < 1e-6);

  std::vector<Tensor> wrong{levels[0], levels[2]};
  CHECK_THROWS_AS(deep_supervision_loss(wrong, l, rep), ShapeError);
}
