#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "imbal/sampler.hpp"

namespace imbal {

/// Population standard deviation of a ratio vector around the uniform value 1/K,
/// background included. 0 means perfectly balanced; the maximum sqrt(K-1)/K is reached
/// when a single class fills every patch.
double imbalance_sigma(std::span<const double> ratios);

/// sqrt(K-1)/K.
double max_imbalance_sigma(int num_classes);

struct ImbalanceReport {
  double sigma = 0.0;
  RatioHistogram histogram;
  PatchSpec spec;
  SamplingStrategy strategy;
  std::uint64_t seed = 0;
  std::int64_t patches_per_epoch = kDefaultPatchesPerEpoch;
  /// Voxels per patch; for full-volume specs the largest volume in the set.
  std::int64_t voxels = 0;
};

ImbalanceReport evaluate_patch_size(std::span<const LabelVolume> volumes, const PatchSpec& spec,
                                    const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                                    const EpochOptions& options);

/// Candidate patch sizes. Defaults keep sizes divisible by the pooling steps of a
/// 4-level in-plane / 3-level out-of-plane UNet.
struct PatchConstraints {
  std::array<std::int64_t, 3> axis_step{16, 16, 8};
  std::array<std::int64_t, 3> axis_min{32, 32, 16};
  std::array<std::int64_t, 3> axis_max{192, 192, 64};
  std::optional<std::int64_t> max_voxels;
  /// Also consider sampling whole volumes.
  bool include_full_volume = false;
  /// Extra explicit sizes that bypass the step grid (still subject to max_voxels).
  std::vector<PatchSpec> extra;
};

/// Step-aligned sizes within [min, max] per axis that respect max_voxels, plus extras.
/// Sorted by descending voxel count (full volume first), then descending (px, py, pz).
/// Throws Error when nothing qualifies.
std::vector<PatchSpec> enumerate_candidates(const PatchConstraints& constraints);

inline constexpr double kDefaultTieDelta = 1e-3;

struct OptimizationResult {
  PatchSpec best;
  ImbalanceReport best_report;
  /// Every candidate, ordered by sigma ascending, then voxel count descending.
  std::vector<ImbalanceReport> ranking;
};

/// Candidate i is simulated on RNG stream i under the shared seed. Among candidates whose
/// sigma lies within tie_delta of the minimum, the one with most voxels wins.
OptimizationResult optimize_patch_size(std::span<const LabelVolume> volumes, const PatchConstraints& constraints,
                                       const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                                       std::uint64_t seed, double tie_delta = kDefaultTieDelta,
                                       bool exact = false);

}  // namespace imbal
