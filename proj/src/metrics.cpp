#include "glims/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "glims/tensor.hpp"

namespace glims {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": mask sizes differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

void require_extent(std::size_t n, const Grid3& e, const char* what) {
  if (static_cast<std::int64_t>(n) != e[0] * e[1] * e[2])
    throw ShapeError(std::string(what) + ": mask of " + std::to_string(n) + " voxels does not match extent " +
                     std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" + std::to_string(e[2]));
}

// Lower envelope of parabolas: f[i] <- min_j (i - j)^2 * w + f[j] along a
// strided line of length n.
void envelope_pass(double* f, std::int64_t n, std::int64_t stride, double w, std::vector<double>& g,
                   std::vector<std::int64_t>& v, std::vector<double>& z) {
  for (std::int64_t i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = f[i * stride];
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    const double fq = g[static_cast<std::size_t>(q)];
    if (fq == kInf) continue;
    double s = -kInf;
    while (k >= 0) {
      const std::int64_t p = v[static_cast<std::size_t>(k)];
      const double fp = g[static_cast<std::size_t>(p)];
      s = ((fq + w * static_cast<double>(q * q)) - (fp + w * static_cast<double>(p * p))) / (2 * w * static_cast<double>(q - p));
      if (s > z[static_cast<std::size_t>(k)]) break;
      --k;
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
    z[static_cast<std::size_t>(k) + 1] = kInf;
  }
  if (k < 0) return;
  std::int64_t j = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    while (z[static_cast<std::size_t>(j) + 1] < static_cast<double>(i)) ++j;
    const std::int64_t p = v[static_cast<std::size_t>(j)];
    const double d = static_cast<double>(i - p);
    f[i * stride] = d * d * w + g[static_cast<std::size_t>(p)];
  }
}

}  // namespace

double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  require_same_size(pred.size(), gt.size(), "dsc");
  std::int64_t inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    inter += a && b;
    sp += a;
    sg += b;
  }
  if (sp + sg == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

std::vector<std::int64_t> boundary_voxels(std::span<const std::uint8_t> mask, const Grid3& e) {
  require_extent(mask.size(), e, "boundary_voxels");
  std::vector<std::int64_t> out;
  const std::int64_t D = e[0], H = e[1], W = e[2];
  auto fg = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return mask[static_cast<std::size_t>((z * H + y) * W + x)] != 0; };
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        if (!fg(z, y, x)) continue;
        const bool face = z == 0 || y == 0 || x == 0 || z == D - 1 || y == H - 1 || x == W - 1;
        if (face || !fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) ||
            !fg(z, y, x - 1) || !fg(z, y, x + 1))
          out.push_back((z * H + y) * W + x);
      }
  return out;
}

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> marked, const Grid3& e,
                                               const Spacing3& spacing) {
  require_extent(marked.size(), e, "distance transform");
  const std::int64_t D = e[0], H = e[1], W = e[2];
  std::vector<double> f(marked.size());
  for (std::size_t i = 0; i < marked.size(); ++i) f[i] = marked[i] ? 0.0 : kInf;
  const double wz = spacing[0] * spacing[0], wy = spacing[1] * spacing[1], wx = spacing[2] * spacing[2];
  const std::int64_t longest = std::max({D, H, W});
  // x, then y, then z: the final value is ((dx^2 wx) + dy^2 wy) + dz^2 wz.
#pragma omp parallel
  {
    std::vector<double> g(static_cast<std::size_t>(longest)), z(static_cast<std::size_t>(longest) + 1);
    std::vector<std::int64_t> v(static_cast<std::size_t>(longest));
#pragma omp for schedule(static)
    for (std::int64_t line = 0; line < D * H; ++line) envelope_pass(f.data() + line * W, W, 1, wx, g, v, z);
#pragma omp for schedule(static)
    for (std::int64_t line = 0; line < D * W; ++line) {
      const std::int64_t zz = line / W, xx = line % W;
      envelope_pass(f.data() + zz * H * W + xx, H, W, wy, g, v, z);
    }
#pragma omp for schedule(static)
    for (std::int64_t line = 0; line < H * W; ++line) envelope_pass(f.data() + line, D, H * W, wz, g, v, z);
  }
  return f;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ShapeError("percentile of an empty set");
  const auto n = static_cast<double>(values.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

std::optional<double> hd95(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Grid3& extent,
                           const Spacing3& spacing) {
  require_same_size(pred.size(), gt.size(), "hd95");
  require_extent(pred.size(), extent, "hd95");
  const auto bp = boundary_voxels(pred, extent);
  const auto bg = boundary_voxels(gt, extent);
  if (bp.empty() || bg.empty()) return std::nullopt;
  auto directed = [&](const std::vector<std::int64_t>& from, const std::vector<std::int64_t>& to) {
    std::vector<std::uint8_t> marked(pred.size(), 0);
    for (auto i : to) marked[static_cast<std::size_t>(i)] = 1;
    const auto dt = squared_distance_transform(marked, extent, spacing);
    std::vector<double> d;
    d.reserve(from.size());
    for (auto i : from) d.push_back(std::sqrt(dt[static_cast<std::size_t>(i)]));
    return nearest_rank_percentile(std::move(d), 0.95);
  };
  return std::max(directed(bp, bg), directed(bg, bp));
}

MetricsReport evaluate_labels(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt, const Grid3& extent,
                              int num_classes, const Spacing3& spacing) {
  require_same_size(pred.size(), gt.size(), "evaluate");
  MetricsReport r;
  std::vector<std::uint8_t> mp(pred.size()), mg(gt.size());
  for (int k = 1; k < num_classes; ++k) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
      mp[i] = pred[i] == k;
      mg[i] = gt[i] == k;
    }
    ClassMetrics c;
    c.label = k;
    c.name = "class" + std::to_string(k);
    c.dsc_percent = 100.0 * dsc(mp, mg);
    c.hd95 = hd95(mp, mg, extent, spacing);
    r.classes.push_back(c);
  }
  double sum = 0, hsum = 0;
  int hcount = 0;
  for (const auto& c : r.classes) {
    sum += c.dsc_percent;
    if (c.hd95) {
      hsum += *c.hd95;
      ++hcount;
    }
  }
  r.mean_dsc_percent = r.classes.empty() ? 0 : sum / static_cast<double>(r.classes.size());
  if (hcount > 0) r.mean_hd95 = hsum / hcount;
  return r;
}

MetricsReport average_reports(std::span<const MetricsReport> cases) {
  MetricsReport r;
  if (cases.empty()) return r;
  const std::size_t nc = cases.front().classes.size();
  for (std::size_t k = 0; k < nc; ++k) {
    ClassMetrics c = cases.front().classes[k];
    double dsum = 0, hsum = 0;
    int hcount = 0;
    for (const auto& cs : cases) {
      if (cs.classes.size() != nc) throw ShapeError("average_reports: class count differs between cases");
      dsum += cs.classes[k].dsc_percent;
      if (cs.classes[k].hd95) {
        hsum += *cs.classes[k].hd95;
        ++hcount;
      }
    }
    c.dsc_percent = dsum / static_cast<double>(cases.size());
    c.hd95 = hcount > 0 ? std::optional<double>(hsum / hcount) : std::nullopt;
    r.classes.push_back(c);
  }
  double sum = 0, hsum = 0;
  int hcount = 0;
  for (const auto& c : r.classes) {
    sum += c.dsc_percent;
    if (c.hd95) {
      hsum += *c.hd95;
      ++hcount;
    }
  }
  r.mean_dsc_percent = nc ? sum / static_cast<double>(nc) : 0;
  if (hcount > 0) r.mean_hd95 = hsum / hcount;
  return r;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(10) << "class" << std::right << std::setw(10) << "DSC%" << std::setw(12) << "HD95" << "\n";
  for (const auto& c : classes) {
    os << std::left << std::setw(10) << c.name << std::right << std::setw(10) << c.dsc_percent << std::setw(12);
    if (c.hd95) os << *c.hd95; else os << "undefined";
    os << "\n";
  }
  os << std::left << std::setw(10) << "mean" << std::right << std::setw(10) << mean_dsc_percent << std::setw(12);
  if (mean_hd95) os << *mean_hd95; else os << "undefined";
  os << "\n";
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["classes"] = nlohmann::json::array();
  for (const auto& c : classes) {
    nlohmann::json e{{"name", c.name}, {"label", c.label}, {"dsc_percent", c.dsc_percent}, {"hd95_defined", c.hd95.has_value()}};
    e["hd95"] = c.hd95 ? nlohmann::json(*c.hd95) : nlohmann::json(nullptr);
    j["classes"].push_back(e);
  }
  j["mean_dsc_percent"] = mean_dsc_percent;
  j["mean_hd95"] = mean_hd95 ? nlohmann::json(*mean_hd95) : nlohmann::json(nullptr);
  return j;
}

}  // namespace glims
