#include "imbal/planner.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace imbal {

double imbalance_sigma(std::span<const double> ratios) {
  if (ratios.empty()) throw Error("imbalance_sigma: empty ratio vector");
  const double k = static_cast<double>(ratios.size());
  const double uniform = 1.0 / k;
  double acc = 0.0;
  for (double r : ratios) acc += (r - uniform) * (r - uniform);
  return std::sqrt(acc / k);
}

double max_imbalance_sigma(int num_classes) {
  const double k = num_classes;
  return std::sqrt(k - 1.0) / k;
}

ImbalanceReport evaluate_patch_size(std::span<const LabelVolume> volumes, const PatchSpec& spec,
                                    const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                                    const EpochOptions& options) {
  ImbalanceReport report;
  report.histogram = simulate_epoch(volumes, spec, strategy, patches_per_epoch, options);
  report.sigma = imbalance_sigma(report.histogram.class_ratios);
  report.spec = spec;
  report.strategy = strategy;
  report.seed = options.seed;
  report.patches_per_epoch = patches_per_epoch;
  if (spec.full_volume) {
    for (const LabelVolume& v : volumes) report.voxels = std::max(report.voxels, v.dims().voxels());
  } else {
    report.voxels = spec.voxels();
  }
  return report;
}

std::vector<PatchSpec> enumerate_candidates(const PatchConstraints& c) {
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    if (c.axis_step[ua] < 1) throw Error("patch constraints: axis steps must be >= 1");
    if (c.axis_min[ua] < 1 || c.axis_min[ua] > c.axis_max[ua])
      throw Error("patch constraints: need 1 <= min <= max on every axis");
  }
  auto fits = [&](std::int64_t voxels) { return !c.max_voxels || voxels <= *c.max_voxels; };

  std::array<std::vector<std::int64_t>, 3> sizes;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::int64_t step = c.axis_step[a];
    for (std::int64_t s = (c.axis_min[a] + step - 1) / step * step; s <= c.axis_max[a]; s += step)
      sizes[a].push_back(s);
  }
  std::vector<PatchSpec> out;
  for (std::int64_t x : sizes[0])
    for (std::int64_t y : sizes[1])
      for (std::int64_t z : sizes[2])
        if (fits(x * y * z)) out.push_back({x, y, z, false});
  for (const PatchSpec& e : c.extra) {
    if (!e.full_volume && !fits(e.voxels())) continue;
    if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
  }
  if (c.include_full_volume && std::find(out.begin(), out.end(), PatchSpec::full()) == out.end())
    out.push_back(PatchSpec::full());
  if (out.empty()) throw Error("patch constraints admit no candidate sizes");

  std::sort(out.begin(), out.end(), [](const PatchSpec& a, const PatchSpec& b) {
    if (a.full_volume != b.full_volume) return a.full_volume;
    return std::make_tuple(a.voxels(), a.px, a.py, a.pz) > std::make_tuple(b.voxels(), b.px, b.py, b.pz);
  });
  return out;
}

OptimizationResult optimize_patch_size(std::span<const LabelVolume> volumes, const PatchConstraints& constraints,
                                       const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                                       std::uint64_t seed, double tie_delta, bool exact) {
  if (tie_delta < 0.0) throw Error("tie_delta must be non-negative");
  const auto candidates = enumerate_candidates(constraints);
  OptimizationResult result;
  result.ranking.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    EpochOptions opts;
    opts.seed = seed;
    opts.stream = static_cast<std::uint32_t>(i);
    opts.exact = exact;
    result.ranking.push_back(evaluate_patch_size(volumes, candidates[i], strategy, patches_per_epoch, opts));
  }
  // Full-volume specs rank as larger than any explicit size with equal voxel proxy.
  auto context_key = [](const ImbalanceReport& r) {
    return std::make_tuple(r.voxels, r.spec.full_volume, r.spec.px, r.spec.py, r.spec.pz);
  };
  std::stable_sort(result.ranking.begin(), result.ranking.end(), [&](const ImbalanceReport& a, const ImbalanceReport& b) {
    if (a.sigma != b.sigma) return a.sigma < b.sigma;
    return context_key(a) > context_key(b);
  });
  const double best_sigma = result.ranking.front().sigma;
  const ImbalanceReport* best = &result.ranking.front();
  for (const ImbalanceReport& r : result.ranking)
    if (r.sigma <= best_sigma + tie_delta && context_key(r) > context_key(*best)) best = &r;
  result.best = best->spec;
  result.best_report = *best;
  return result;
}

}  // namespace imbal
