#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imbal/rng.hpp"
#include "imbal/volume.hpp"

namespace imbal {

/// Patch extent in voxels. A full-volume spec takes the extent of whichever volume is
/// being sampled.
struct PatchSpec {
  std::int64_t px = 1;
  std::int64_t py = 1;
  std::int64_t pz = 1;
  bool full_volume = false;

  static PatchSpec full() { return {0, 0, 0, true}; }
  static PatchSpec cube(std::int64_t n) { return {n, n, n, false}; }

  /// Extent used on a volume of the given dims.
  Dims extent_for(const Dims& volume) const {
    return full_volume ? volume : Dims{px, py, pz};
  }
  std::int64_t voxels() const { return px * py * pz; }
  /// "PXxPYxPZ" or "full".
  std::string to_string() const;
  /// Inverse of to_string; throws Error on malformed input.
  static PatchSpec parse(const std::string& text);

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

enum class SamplingKind { Uniform, ForegroundOversample };

struct SamplingStrategy {
  SamplingKind kind = SamplingKind::Uniform;
  double oversample_prob = 1.0 / 3.0;

  static SamplingStrategy uniform() { return {}; }
  static SamplingStrategy foreground(double prob = 1.0 / 3.0) {
    return {SamplingKind::ForegroundOversample, prob};
  }
  /// "uniform" or "fg:PROB".
  std::string to_string() const;
  static SamplingStrategy parse(const std::string& text);

  friend bool operator==(const SamplingStrategy&, const SamplingStrategy&) = default;
};

/// Mean in-patch class ratios over an epoch of sampled patches.
struct RatioHistogram {
  std::vector<double> class_ratios;
  std::vector<std::string> class_names;
  std::int64_t patches_sampled = 0;
  /// Draws that asked for a foreground patch on a volume without foreground.
  std::int64_t fallback_draws = 0;
  /// True when the ratios are the exact expectation over all valid origins.
  bool exact = false;
  /// Per-draw ratio vectors, only filled when requested.
  std::vector<std::vector<double>> per_patch_ratios;
};

/// count(c) / V for every class id in [0, num_classes).
std::vector<double> class_ratios(const LabelVolume& patch, int num_classes);

/// Geometry of patch placement on one volume. Volumes smaller than the patch along an
/// axis are padded symmetrically with background (the extra voxel goes after), and
/// origins are expressed in padded coordinates.
class PatchGrid {
 public:
  PatchGrid(const Dims& volume, const Dims& patch);

  const Dims& patch() const { return patch_; }
  const Dims& padded() const { return padded_; }
  /// Offset of original voxel 0 inside the padded volume.
  std::int64_t pad_before(int axis) const { return pad_before_[static_cast<std::size_t>(axis)]; }
  /// Number of valid origins along an axis: padded - patch + 1.
  std::int64_t origins(int axis) const { return padded_[axis] - patch_[axis] + 1; }
  std::int64_t total_origins() const { return origins(0) * origins(1) * origins(2); }
  /// How many valid origins along `axis` produce a patch containing padded coordinate x.
  std::int64_t origins_containing(int axis, std::int64_t x) const;

 private:
  Dims patch_;
  Dims padded_;
  std::array<std::int64_t, 3> pad_before_{};
};

struct PatchDraw {
  std::array<std::int64_t, 3> origin{};  // padded coordinates
  bool foreground_forced = false;
  bool fallback = false;
};

struct SampledPatch {
  LabelVolume patch;
  PatchDraw draw;
};

/// Precomputed per-class bounding-box prefix sums and the foreground voxel list of one
/// volume, so that drawing a patch and counting its classes is O(classes).
class PatchSampler {
 public:
  PatchSampler(const LabelVolume& volume, const PatchSpec& spec, int num_classes);

  const PatchGrid& grid() const { return grid_; }
  std::int64_t foreground_voxels() const { return static_cast<std::int64_t>(foreground_.size()); }

  /// Consumes words from rng: for oversampling one uniform01 for the coin, then on
  /// success one index for the foreground voxel; finally one index per axis (x, y, z)
  /// for the origin.
  PatchDraw draw(const SamplingStrategy& strategy, DrawStream& rng) const;

  /// Class voxel counts of the patch at `origin` (padded coordinates); padding counts
  /// as background.
  std::vector<std::int64_t> counts(const std::array<std::int64_t, 3>& origin) const;

  /// Copy of the patch at `origin`, padding filled with background.
  LabelVolume extract(const std::array<std::int64_t, 3>& origin) const;

  /// Exact expectation of the ratio vector under `strategy` over all valid origins.
  std::vector<double> expected_ratios(const SamplingStrategy& strategy) const;

 private:
  struct ClassTable {
    std::array<std::int64_t, 3> lo{}, hi{};  // inclusive bbox, original coordinates
    std::vector<std::int64_t> prefix;        // (bx+1)(by+1)(bz+1) summed-volume table
    bool empty = true;
  };

  std::int64_t box_count(const ClassTable& t, std::array<std::int64_t, 3> lo,
                         std::array<std::int64_t, 3> hi) const;

  const LabelVolume* volume_;
  PatchGrid grid_;
  int num_classes_;
  std::vector<ClassTable> tables_;          // index c for class c >= 1
  std::vector<std::int64_t> foreground_;    // linear indices in the original volume
};

/// Draws one patch. Deterministic given the stream.
SampledPatch sample_patch(const LabelVolume& volume, const PatchSpec& spec, const SamplingStrategy& strategy,
                          DrawStream& rng, int num_classes = 0);

struct EpochOptions {
  std::uint64_t seed = 0;
  /// Separates independent simulations under the same seed (e.g. candidate index).
  std::uint32_t stream = 0;
  bool keep_per_patch = false;
  /// Replaces Monte-Carlo sampling by the exact all-origins expectation.
  bool exact = false;
  /// 0 = derive from the volumes (max label + 1, or class name count).
  int num_classes = 0;
};

inline constexpr std::int64_t kDefaultPatchesPerEpoch = 500;

/// Draw d uses DrawStream(seed, stream, d): first word picks the volume uniformly, the
/// rest goes to PatchSampler::draw.
RatioHistogram simulate_epoch(std::span<const LabelVolume> volumes, const PatchSpec& spec,
                              const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                              const EpochOptions& options);

/// Class count shared by a volume set.
int common_num_classes(std::span<const LabelVolume> volumes);

}  // namespace imbal
