#include "glims/phantom.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"

namespace glims {

void PhantomSpec::validate() const {
  for (auto e : extent)
    if (e < 16) throw ConfigError("phantom: extents must be >= 16 per axis");
  if (num_classes < 2 || num_classes > 255) throw ConfigError("phantom: num_classes must be in [2, 255]");
  if (channels < 1) throw ConfigError("phantom: channels must be >= 1");
  if (!(outer_radius.first > 0 && outer_radius.first <= outer_radius.second && outer_radius.second < 0.5))
    throw ConfigError("phantom: outer radius range must satisfy 0 < min <= max < 0.5");
  if (!(inner_scale.first > 0 && inner_scale.first <= inner_scale.second))
    throw ConfigError("phantom: inner scale range must satisfy 0 < min <= max");
  if (inner_scale.second >= 1.0) throw ConfigError("phantom: inner regions would be larger than their parent (scale >= 1)");
  if (!(center_jitter >= 0 && center_jitter <= 1)) throw ConfigError("phantom: center_jitter must be in [0, 1]");
  if (noise_sigma < 0) throw ConfigError("phantom: noise_sigma must be >= 0");
}

bool Ellipsoid::contains(double z, double y, double x) const {
  const double a = (z - center[0]) / semi_axes[0];
  const double b = (y - center[1]) / semi_axes[1];
  const double c = (x - center[2]) / semi_axes[2];
  return a * a + b * b + c * c <= 1.0;
}

double Ellipsoid::volume() const { return 4.0 / 3.0 * std::numbers::pi * semi_axes[0] * semi_axes[1] * semi_axes[2]; }

double phantom_mean(const PhantomSpec& spec, int label, std::int64_t channel) {
  const auto c = static_cast<double>(channel);
  return spec.class_mean * label * (1.0 + spec.channel_step * c) + spec.channel_offset * c;
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](std::pair<double, double> r) { return r.first + (r.second - r.first) * unit(rng); };

  Phantom ph;
  Ellipsoid outer;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto e = static_cast<double>(spec.extent[a]);
    outer.semi_axes[a] = between(spec.outer_radius) * e;
    // Keep the whole ellipsoid inside the voxel grid.
    const double lo = outer.semi_axes[a], hi = e - 1 - outer.semi_axes[a];
    outer.center[a] = lo + (hi - lo) * unit(rng);
  }
  ph.regions.push_back(outer);
  for (int k = 2; k < spec.num_classes; ++k) {
    const Ellipsoid& parent = ph.regions.back();
    Ellipsoid inner;
    double largest = 0;
    for (std::size_t a = 0; a < 3; ++a) {
      const double s = between(spec.inner_scale);
      inner.semi_axes[a] = s * parent.semi_axes[a];
      largest = std::max(largest, s);
    }
    // In the parent's normalized frame the inner ellipsoid fits inside the
    // unit ball whenever |offset| + largest scale <= 1.
    std::array<double, 3> dir{};
    double norm = 0;
    std::normal_distribution<double> normal;
    for (auto& d : dir) {
      d = normal(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
    const double reach = spec.center_jitter * (1.0 - largest) * unit(rng);
    for (std::size_t a = 0; a < 3; ++a)
      inner.center[a] = parent.center[a] + (norm > 0 ? dir[a] / norm : 0.0) * reach * parent.semi_axes[a];
    ph.regions.push_back(inner);
  }

  const Extent& e = spec.extent;
  const std::int64_t n = e[0] * e[1] * e[2];
  ph.labels.extent = e;
  ph.labels.ids.assign(static_cast<std::size_t>(n), 0);
  for (std::int64_t z = 0; z < e[0]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[2]; ++x) {
        std::uint8_t label = 0;
        for (std::size_t k = 0; k < ph.regions.size(); ++k) {
          if (!ph.regions[k].contains(static_cast<double>(z), static_cast<double>(y), static_cast<double>(x))) break;
          label = static_cast<std::uint8_t>(k + 1);
        }
        ph.labels.ids[static_cast<std::size_t>((z * e[1] + y) * e[2] + x)] = label;
      }

  ph.image.channels = spec.channels;
  ph.image.extent = e;
  ph.image.data.resize(static_cast<std::size_t>(spec.channels * n));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::int64_t c = 0; c < spec.channels; ++c)
    for (std::int64_t i = 0; i < n; ++i) {
      const double mean = phantom_mean(spec, ph.labels.ids[static_cast<std::size_t>(i)], c);
      const double eps = spec.noise_sigma > 0 ? spec.noise_sigma * noise(rng) : 0.0;
      ph.image.data[static_cast<std::size_t>(c * n + i)] = static_cast<float>(mean + eps);
    }
  return ph;
}

Dataset make_phantom_dataset(const PhantomSpec& base, std::int64_t count, double train_fraction) {
  if (count < 1) throw ConfigError("dataset: count must be >= 1");
  Dataset ds;
  const auto n_train = std::clamp<std::int64_t>(std::llround(train_fraction * static_cast<double>(count)), 1, count);
  for (std::int64_t i = 0; i < count; ++i) {
    PhantomSpec s = base;
    s.seed = base.seed + static_cast<std::uint64_t>(i);
    Phantom p = generate_phantom(s);
    char name[32];
    std::snprintf(name, sizeof name, "case_%03lld", static_cast<long long>(i));
    DatasetCase c{name, std::move(p.image), std::move(p.labels)};
    (i < n_train ? ds.train : ds.validation).push_back(std::move(c));
  }
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  nlohmann::json index{{"format", "glims-dataset"}, {"version", 1}};
  auto emit = [&](const std::vector<DatasetCase>& cases, const std::string& split) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& c : cases) {
      const auto image = std::filesystem::path(split) / (c.name + "_image.glv");
      const auto label = std::filesystem::path(split) / (c.name + "_label.glv");
      write_volume(dir / image, c.image);
      write_labels(dir / label, c.labels);
      list.push_back({{"name", c.name}, {"image", image.generic_string()}, {"label", label.generic_string()}});
    }
    index[split] = list;
  };
  emit(ds.train, "train");
  emit(ds.validation, "val");
  std::ofstream out(dir / "dataset.json");
  out << index.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + (dir / "dataset.json").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw IoError("cannot open " + (dir / "dataset.json").string());
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset index: " + std::string(e.what()));
  }
  Dataset ds;
  auto load = [&](const std::string& split, std::vector<DatasetCase>& out) {
    if (!index.contains(split)) return;
    for (const auto& c : index[split]) {
      DatasetCase dc;
      dc.name = c.at("name").get<std::string>();
      dc.image = read_volume(dir / c.at("image").get<std::string>());
      dc.labels = read_labels(dir / c.at("label").get<std::string>());
      if (dc.image.extent != dc.labels.extent) throw IoError("case " + dc.name + ": image and label extents differ");
      out.push_back(std::move(dc));
    }
  };
  load("train", ds.train);
  load("val", ds.validation);
  if (ds.train.empty()) throw IoError("dataset at " + dir.string() + " has no training cases");
  return ds;
}

}  // namespace glims
