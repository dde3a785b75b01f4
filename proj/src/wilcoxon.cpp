#include <algorithm>
#include <cmath>
#include <numeric>

#include "imbal/metrics.hpp"

namespace imbal {

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha) {
  if (a.size() != b.size()) throw Error("wilcoxon: paired samples differ in length");
  if (a.empty()) throw Error("wilcoxon: need at least one pair");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult r;
  r.n = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    r.all_zero = true;
    r.p_value = 1.0;
    r.exact = true;
    return r;
  }

  // Average ranks of |d|, kept doubled so that tied ranks stay integral.
  std::vector<std::size_t> order(diffs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<std::int64_t> rank2(diffs.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    // ranks i+1 .. j+1 averaged, doubled: (i+1 + j+1)
    const auto doubled = static_cast<std::int64_t>(i + j + 2);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  std::int64_t w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) w_plus2 += rank2[i];
  }
  r.w_plus = static_cast<double>(w_plus2) / 2.0;
  r.w_minus = static_cast<double>(total2 - w_plus2) / 2.0;

  const double n = r.n;
  if (r.n <= kWilcoxonExactMaxN) {
    // Distribution of the doubled W+ over all 2^n sign assignments.
    std::vector<double> ways(static_cast<std::size_t>(total2) + 1, 0.0);
    ways[0] = 1.0;
    std::int64_t reach = 0;
    for (std::int64_t rk : rank2) {
      for (std::int64_t s = reach; s >= 0; --s)
        if (ways[static_cast<std::size_t>(s)] != 0.0) ways[static_cast<std::size_t>(s + rk)] += ways[static_cast<std::size_t>(s)];
      reach += rk;
    }
    double lower = 0.0, upper = 0.0;
    for (std::int64_t s = 0; s <= total2; ++s) {
      if (s <= w_plus2) lower += ways[static_cast<std::size_t>(s)];
      if (s >= w_plus2) upper += ways[static_cast<std::size_t>(s)];
    }
    const double all = std::ldexp(1.0, r.n);
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    r.exact = true;
  } else {
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    r.z = var > 0.0 ? (r.w_plus - mean) / std::sqrt(var) : 0.0;
    r.p_value = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));
  }
  r.significant = r.p_value < alpha;
  return r;
}

}  // namespace imbal
