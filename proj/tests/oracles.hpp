#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <iterator>
#include <limits>
#include <set>
#include <vector>

#include "imbal/metrics.hpp"

// Brute-force references for the metric kernels.
namespace imbal::oracle {


inline std::vector<VoxelCoord> surface(const LabelVolume& v, Label c) {
  const Dims& d = v.dims();
  auto in = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return x >= 0 && y >= 0 && z >= 0 && x < d.nx && y < d.ny && z < d.nz && v.at(x, y, z) == c;
  };
  std::vector<VoxelCoord> out;
  const int steps[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        if (!in(x, y, z)) continue;
        bool border = false;
        for (const auto& s : steps) border = border || !in(x + s[0], y + s[1], z + s[2]);
        if (border) out.push_back({static_cast<int>(x), static_cast<int>(y), static_cast<int>(z)});
      }
  return out;
}

inline std::vector<double> directed(const std::vector<VoxelCoord>& from, const std::vector<VoxelCoord>& to, const Spacing& s) {
  std::vector<double> out;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dx = (a[0] - b[0]) * s.sx, dy = (a[1] - b[1]) * s.sy, dz = (a[2] - b[2]) * s.sz;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

inline double p95(std::vector<double> d) {
  std::sort(d.begin(), d.end());
  const double rank = 0.95 * static_cast<double>(d.size() - 1);
  const auto lo = static_cast<std::size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (frac == 0.0) return d[lo];
  return d[lo] + frac * (d[lo + 1] - d[lo]);
}

inline double hd95(const LabelVolume& a, const LabelVolume& b, Label c) {
  const auto sa = surface(a, c), sb = surface(b, c);
  if (sa.empty() || sb.empty()) return std::nan("");
  return std::max(p95(directed(sa, sb, a.spacing())), p95(directed(sb, sa, a.spacing())));
}

inline double dsc(const LabelVolume& a, const LabelVolume& b, Label c) {
  std::set<std::int64_t> sa, sb, both;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    if (a.data()[i] == c) sa.insert(static_cast<std::int64_t>(i));
    if (b.data()[i] == c) sb.insert(static_cast<std::int64_t>(i));
  }
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::inserter(both, both.begin()));
  if (sa.empty() && sb.empty()) return 1.0;
  return 2.0 * static_cast<double>(both.size()) / static_cast<double>(sa.size() + sb.size());
}

/// Breadth-first flood fill over the 26-neighbourhood.
inline std::vector<std::int64_t> component_sizes(const LabelVolume& v, Label c) {
  const Dims& d = v.dims();
  std::vector<bool> seen(static_cast<std::size_t>(d.voxels()), false);
  std::vector<std::int64_t> sizes;
  for (std::int64_t z0 = 0; z0 < d.nz; ++z0)
    for (std::int64_t y0 = 0; y0 < d.ny; ++y0)
      for (std::int64_t x0 = 0; x0 < d.nx; ++x0) {
        const auto i0 = static_cast<std::size_t>(linear_index(d, x0, y0, z0));
        if (seen[i0] || v.at(x0, y0, z0) != c) continue;
        std::deque<std::array<std::int64_t, 3>> q{{x0, y0, z0}};
        seen[i0] = true;
        std::int64_t n = 0;
        while (!q.empty()) {
          const auto [x, y, z] = q.front();
          q.pop_front();
          ++n;
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const std::int64_t a = x + dx, b = y + dy, e = z + dz;
                if (a < 0 || b < 0 || e < 0 || a >= d.nx || b >= d.ny || e >= d.nz) continue;
                const auto j = static_cast<std::size_t>(linear_index(d, a, b, e));
                if (seen[j] || v.at(a, b, e) != c) continue;
                seen[j] = true;
                q.push_back({a, b, e});
              }
        }
        sizes.push_back(n);
      }
  return sizes;
}

/// Two-sided exact p by listing all 2^n sign assignments of the averaged ranks.
inline double wilcoxon_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  if (d.empty()) return 1.0;
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double w = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) w += rank[i];
  std::uint64_t lower = 0, upper = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) s += rank[i];
    lower += s <= w;
    upper += s >= w;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(lower, upper)) / std::ldexp(1.0, static_cast<int>(n)));
}

}  // namespace imbal::oracle
