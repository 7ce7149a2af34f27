#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "glims/phantom.hpp"
#include "glims/volume.hpp"

using namespace glims;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("glims_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("volume and label files roundtrip exactly") {
  const auto dir = scratch_dir("io");
  Volume v;
  v.channels = 2;
  v.extent = {3, 4, 5};
  v.spacing = {1.0, 0.5, 2.25};
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  for (int i = 0; i < 120; ++i) v.data.push_back(n(rng));
  v.data[7] = -0.0f;
  write_volume(dir / "v.glv", v);
  const Volume r = read_volume(dir / "v.glv");
  CHECK(r.channels == 2);
  CHECK(r.extent == v.extent);
  CHECK(r.spacing == v.spacing);
  CHECK(std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0);
  write_volume(dir / "v2.glv", r);
  CHECK(slurp(dir / "v.glv") == slurp(dir / "v2.glv"));

  LabelVolume l{{2, 2, 3}, {1, 1, 1}, {0, 1, 2, 3, 0, 1, 2, 3, 0, 1, 2, 3}};
  write_labels(dir / "l.glv", l);
  const LabelVolume lr = read_labels(dir / "l.glv");
  CHECK(lr.ids == l.ids);
  CHECK(lr.extent == l.extent);
}

TEST_CASE("on-disk layout is little-endian and packed") {
  const auto dir = scratch_dir("layout");
  Volume v;
  v.channels = 1;
  v.extent = {1, 1, 2};
  v.spacing = {1.0, 2.0, 0.5};
  v.data = {1.0f, -2.0f};
  write_volume(dir / "v.glv", v);
  const std::string b = slurp(dir / "v.glv");
  const unsigned char expected[] = {
      'G', 'L', 'V', 'O', 'L', '1',                        // magic
      1, 0, 0, 0,                                          // version
      1, 0, 0, 0,                                          // channels
      1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0,                  // D, H, W
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40,      // spacing 1.0, 2.0
      0x00, 0x00, 0x00, 0x3f,                              // spacing 0.5
      0,                                                   // dtype f32
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};     // 1.0, -2.0
  REQUIRE(b.size() == sizeof expected);
  CHECK(b.size() == kVolumeHeaderBytes + 8);
  CHECK(std::memcmp(b.data(), expected, sizeof expected) == 0);
}

TEST_CASE("malformed files raise distinct errors") {
  const auto dir = scratch_dir("bad");
  LabelVolume l{{2, 2, 2}, {1, 1, 1}, std::vector<std::uint8_t>(8, 1)};
  write_labels(dir / "l.glv", l);
  std::string good = slurp(dir / "l.glv");
  auto write_raw = [&](const std::string& bytes) {
    std::ofstream(dir / "x.glv", std::ios::binary) << bytes;
    return dir / "x.glv";
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(read_labels(write_raw(bad_magic)), BadMagicError);
  std::string bad_version = good;
  bad_version[6] = 2;
  CHECK_THROWS_AS(read_labels(write_raw(bad_version)), VersionMismatchError);
  try {
    read_labels(write_raw(good.substr(0, good.size() - 3)));
    FAIL("expected truncation error");
  } catch (const TruncatedPayloadError& e) {
    CHECK(std::string(e.what()).find("payload shorter than header promise") != std::string::npos);
  }
  CHECK_THROWS_AS(read_labels(write_raw(good + "zz")), PayloadSizeError);
  CHECK_THROWS_AS(read_volume(dir / "l.glv"), PayloadSizeError);
  CHECK_THROWS_AS(read_labels(dir / "absent.glv"), IoError);
}

TEST_CASE("phantoms are deterministic and nested") {
  PhantomSpec s;
  s.seed = 3;
  s.extent = {24, 20, 28};
  const Phantom a = generate_phantom(s), b = generate_phantom(s);
  CHECK(a.image.data == b.image.data);
  CHECK(a.labels.ids == b.labels.ids);
  s.seed = 4;
  CHECK(generate_phantom(s).labels.ids != a.labels.ids);
  for (std::int64_t z = 0; z < 24; ++z)
    for (std::int64_t y = 0; y < 20; ++y)
      for (std::int64_t x = 0; x < 28; ++x) {
        const int label = a.labels.ids[static_cast<std::size_t>((z * 20 + y) * 28 + x)];
        // Membership of region k implies membership of every outer region.
        for (int k = 1; k <= label; ++k)
          CHECK(a.regions[static_cast<std::size_t>(k - 1)].contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)));
      }
}

TEST_CASE("noise-free intensities are a function of the label") {
  PhantomSpec s;
  s.seed = 8;
  s.extent = {16, 16, 16};
  s.noise_sigma = 0;
  const Phantom p = generate_phantom(s);
  const std::size_t n = 16 * 16 * 16;
  for (std::int64_t c = 0; c < s.channels; ++c)
    for (std::size_t i = 0; i < n; ++i)
      CHECK(p.image.data[static_cast<std::size_t>(c) * n + i] ==
            static_cast<float>(phantom_mean(s, p.labels.ids[i], c)));
}

TEST_CASE("region volumes match ellipsoid volumes on 64^3") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    PhantomSpec s;
    s.seed = seed;
    s.extent = {64, 64, 64};
    const Phantom p = generate_phantom(s);
    for (int k = 1; k < s.num_classes; ++k) {
      std::int64_t count = 0;
      for (auto id : p.labels.ids) count += id >= k;
      const double analytic = p.regions[static_cast<std::size_t>(k - 1)].volume();
      INFO("seed " << seed << " region " << k << ": " << count << " vs " << analytic);
      CHECK(std::abs(static_cast<double>(count) / analytic - 1.0) < 0.10);
    }
  }
}

TEST_CASE("infeasible phantom specs are rejected") {
  PhantomSpec s;
  s.inner_scale = {0.8, 1.2};
  CHECK_THROWS_AS(generate_phantom(s), ConfigError);
  s = PhantomSpec{};
  s.extent = {15, 32, 32};
  CHECK_THROWS_AS(generate_phantom(s), ConfigError);
  s = PhantomSpec{};
  s.outer_radius = {0.4, 0.3};
  CHECK_THROWS_AS(generate_phantom(s), ConfigError);
}

TEST_CASE("patch corner distribution passes a chi-square test") {
  Volume v;
  v.channels = 1;
  v.extent = {100, 100, 100};
  v.data.assign(1000000, 0.0f);
  LabelVolume l{v.extent, {1, 1, 1}, std::vector<std::uint8_t>(1000000, 0)};
  std::mt19937_64 rng(23);
  std::vector<int> counts(125, 0);
  for (int i = 0; i < 1000; ++i) {
    const Patch p = sample_patch(v, l, 96, rng);
    ++counts[static_cast<std::size_t>((p.corner[0] * 5 + p.corner[1]) * 5 + p.corner[2])];
  }
  double chi2 = 0;
  const double expected = 1000.0 / 125.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(124);
  const double p_value = 1.0 - boost::math::cdf(dist, chi2);
  INFO("chi2 " << chi2 << " p " << p_value);
  CHECK(p_value > 0.01);
}

TEST_CASE("patches align image and labels, and small volumes are mirrored") {
  Volume v;
  v.channels = 2;
  v.extent = {6, 5, 4};
  LabelVolume l{v.extent, {1, 1, 1}, {}};
  for (int i = 0; i < 120; ++i) l.ids.push_back(static_cast<std::uint8_t>(i % 7));
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 120; ++i) v.data.push_back(static_cast<float>(i % 7 + 10 * c));
  std::mt19937_64 rng(1);
  const Patch p = sample_patch(v, l, 4, rng);
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(p.image.data[i] == static_cast<float>(p.labels.ids[i]));
    CHECK(p.image.data[64 + i] == static_cast<float>(p.labels.ids[i] + 10));
  }
  Volume same = v;
  same.extent = {4, 4, 4};
  same.data.resize(128);
  LabelVolume same_l{same.extent, {1, 1, 1}, std::vector<std::uint8_t>(64, 0)};
  for (int i = 0; i < 10; ++i) CHECK(sample_patch(same, same_l, 4, rng).corner == Extent{0, 0, 0});
  const Patch grown = sample_patch(v, l, 8, rng);
  CHECK(grown.labels.extent == Extent{8, 8, 8});
  CHECK(grown.corner == Extent{0, 0, 0});

  Patch f = p;
  flip_patch(f, {false, false, true});
  CHECK(f.labels.ids[0] == p.labels.ids[3]);
  CHECK(f.image.data[64 + 1] == p.image.data[64 + 2]);
  flip_patch(f, {false, false, true});
  CHECK(f.labels.ids == p.labels.ids);
}

TEST_CASE("fixed seed gives a fixed corner sequence") {
  Volume v;
  v.channels = 1;
  v.extent = {20, 20, 20};
  v.data.assign(8000, 0.0f);
  LabelVolume l{v.extent, {1, 1, 1}, std::vector<std::uint8_t>(8000, 0)};
  std::mt19937_64 a(9), b(9);
  for (int i = 0; i < 20; ++i) CHECK(sample_patch(v, l, 8, a).corner == sample_patch(v, l, 8, b).corner);
}

TEST_CASE("dataset trees are written deterministically") {
  PhantomSpec s;
  s.seed = 7;
  s.extent = {16, 16, 16};
  const Dataset ds = make_phantom_dataset(s, 5);
  CHECK(ds.train.size() == 4);
  CHECK(ds.validation.size() == 1);
  const auto a = scratch_dir("ds_a"), b = scratch_dir("ds_b");
  write_dataset(a, ds);
  write_dataset(b, make_phantom_dataset(s, 5));
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a);
    CHECK(slurp(entry.path()) == slurp(b / rel));
  }
  const Dataset back = read_dataset(a);
  REQUIRE(back.train.size() == 4);
  CHECK(back.train[2].labels.ids == ds.train[2].labels.ids);
  CHECK(back.validation[0].image.data == ds.validation[0].image.data);
}
