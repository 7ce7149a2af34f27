#pragma once

// Direct all-pairs evaluation of the overlap and boundary-distance metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace glims::oracle {

inline double dsc(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::int64_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    na += a[i] ? 1 : 0;
    nb += b[i] ? 1 : 0;
  }
  if (na == 0 && nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline std::vector<std::array<std::int64_t, 3>> boundary(const std::vector<std::uint8_t>& m,
                                                         const std::array<std::int64_t, 3>& e) {
  std::vector<std::array<std::int64_t, 3>> out;
  auto inside = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return z >= 0 && y >= 0 && x >= 0 && z < e[0] && y < e[1] && x < e[2];
  };
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return inside(z, y, x) && m[static_cast<std::size_t>((z * e[1] + y) * e[2] + x)] != 0;
  };
  const int dz[] = {-1, 1, 0, 0, 0, 0}, dy[] = {0, 0, -1, 1, 0, 0}, dx[] = {0, 0, 0, 0, -1, 1};
  for (std::int64_t z = 0; z < e[0]; ++z)
    for (std::int64_t y = 0; y < e[1]; ++y)
      for (std::int64_t x = 0; x < e[2]; ++x) {
        if (!at(z, y, x)) continue;
        bool edge = false;
        for (int n = 0; n < 6; ++n) edge = edge || !at(z + dz[n], y + dy[n], x + dx[n]);
        if (edge) out.push_back({z, y, x});
      }
  return out;
}

inline double directed(const std::vector<std::array<std::int64_t, 3>>& from,
                       const std::vector<std::array<std::int64_t, 3>>& to, const std::array<double, 3>& s) {
  std::vector<double> d;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double a = static_cast<double>(p[0] - q[0]) * s[0];
      const double b = static_cast<double>(p[1] - q[1]) * s[1];
      const double c = static_cast<double>(p[2] - q[2]) * s[2];
      best = std::min(best, c * c + b * b + a * a);
    }
    d.push_back(std::sqrt(best));
  }
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

inline std::optional<double> hd95(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                  const std::array<std::int64_t, 3>& e, const std::array<double, 3>& s = {1, 1, 1}) {
  const auto ba = boundary(a, e), bb = boundary(b, e);
  if (ba.empty() || bb.empty()) return std::nullopt;
  return std::max(directed(ba, bb, s), directed(bb, ba, s));
}

/// Classical Hausdorff distance between the two boundaries.
inline std::optional<double> hausdorff(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b,
                                       const std::array<std::int64_t, 3>& e) {
  const auto ba = boundary(a, e), bb = boundary(b, e);
  if (ba.empty() || bb.empty()) return std::nullopt;
  auto far = [](const auto& from, const auto& to) {
    double worst = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        double d = 0;
        for (int k = 0; k < 3; ++k) d += static_cast<double>((p[k] - q[k]) * (p[k] - q[k]));
        best = std::min(best, d);
      }
      worst = std::max(worst, best);
    }
    return std::sqrt(worst);
  };
  return std::max(far(ba, bb), far(bb, ba));
}

/// Random blob-like mask: union of a few boxes, possibly empty.
template <class Rng>
std::vector<std::uint8_t> random_mask(Rng& rng, const std::array<std::int64_t, 3>& e, double empty_prob = 0.1) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(e[0] * e[1] * e[2]), 0);
  std::uniform_real_distribution<double> u(0, 1);
  if (u(rng) < empty_prob) return m;
  const int boxes = 1 + static_cast<int>(u(rng) * 3);
  for (int b = 0; b < boxes; ++b) {
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int k = 0; k < 3; ++k) {
      lo[k] = static_cast<std::int64_t>(u(rng) * static_cast<double>(e[k]));
      hi[k] = std::min(e[k], lo[k] + 1 + static_cast<std::int64_t>(u(rng) * static_cast<double>(e[k]) / 2));
    }
    for (std::int64_t z = lo[0]; z < hi[0]; ++z)
      for (std::int64_t y = lo[1]; y < hi[1]; ++y)
        for (std::int64_t x = lo[2]; x < hi[2]; ++x) m[static_cast<std::size_t>((z * e[1] + y) * e[2] + x)] = 1;
  }
  // Sprinkle isolated voxels so boundaries are irregular.
  for (auto& v : m)
    if (u(rng) < 0.02) v = 1;
  return m;
}

}  // namespace glims::oracle
