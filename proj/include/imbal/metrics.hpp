#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imbal/volume.hpp"

namespace imbal {

/// A metric value plus the degenerate-case flags behind it. Undefined values are NaN.
struct MetricValue {
  double value = 0.0;
  bool empty_pred = false;
  bool empty_gt = false;

  bool defined() const { return value == value; }
};

/// 2|A n B| / (|A| + |B|) on the binary masks of class c. Both empty -> 1, one empty -> 0.
MetricValue dsc(const LabelVolume& pred, const LabelVolume& gt, Label c);

/// Border voxels of a binary mask: mask voxels with a 6-neighbour outside the mask or
/// outside the volume. Integer voxel coordinates.
using VoxelCoord = std::array<std::int32_t, 3>;
std::vector<VoxelCoord> surface_voxels(const LabelVolume& volume, Label c);

/// For each voxel of `from`, the Euclidean distance in mm to the nearest voxel of `to`:
/// sqrt((dx*sx)^2 + (dy*sy)^2 + (dz*sz)^2) with integer offsets. `to` must be non-empty.
std::vector<double> directed_surface_distances(std::span<const VoxelCoord> from, std::span<const VoxelCoord> to,
                                               const Spacing& spacing);

/// max(P95(pred -> gt), P95(gt -> pred)) over border-voxel surfaces, in mm.
/// Undefined (NaN) when either mask is empty.
MetricValue hd95(const LabelVolume& pred, const LabelVolume& gt, Label c);

/// Fraction of both surfaces lying within tau mm of the other surface.
/// Both empty -> 1, one empty -> 0.
MetricValue surface_dice(const LabelVolume& pred, const LabelVolume& gt, Label c, double tau_mm);

/// hd95 and surface Dice from a single pair of distance computations.
struct SurfaceMetrics {
  MetricValue hd95;
  std::optional<MetricValue> surface_dice;
};
SurfaceMetrics surface_metrics(const LabelVolume& pred, const LabelVolume& gt, Label c,
                               std::optional<double> tau_mm);

/// Keeps, per selected class, the largest 26-connected component; removed voxels become
/// background. Equal sizes keep the component whose first voxel (in linear order) comes first.
/// An empty class list selects every foreground class.
LabelVolume largest_component(const LabelVolume& volume, std::span<const Label> classes = {});

/// Sizes of the 26-connected components of class c, in order of first voxel.
std::vector<std::int64_t> component_sizes(const LabelVolume& volume, Label c);

struct WilcoxonResult {
  /// Sum of ranks of positive differences (a - b).
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// Pairs left after dropping zero differences.
  int n = 0;
  double p_value = 1.0;
  bool significant = false;
  bool exact = false;
  bool all_zero = false;
  /// Normal-approximation z score (0 when exact).
  double z = 0.0;
};

inline constexpr int kWilcoxonExactMaxN = 25;

/// Two-sided signed-rank test. Zero differences are dropped and tied |d| get averaged
/// ranks. Up to kWilcoxonExactMaxN pairs the p-value is exact over all 2^n sign
/// assignments, p = min(1, 2 min(P(W+ <= w), P(W+ >= w))); above that, normal
/// approximation with tie correction and no continuity correction.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

// ---------------------------------------------------------------- confidence drift

struct ConfidenceCase {
  ProbVolume probs;
  LabelVolume labels;
};

enum class DriftMask {
  GroundTruth,  // voxels whose reference label is c
  Prediction,   // voxels whose arg max prediction is c
};

struct DriftOptions {
  DriftMask mask = DriftMask::GroundTruth;
  bool include_background = false;
  /// Cap on exported samples per class and split; samples are sorted and then taken at
  /// evenly spaced ranks. 0 keeps everything.
  std::size_t max_export_samples = 2000;
};

struct ClassDrift {
  int class_id = 0;
  std::int64_t n_train = 0;
  std::int64_t n_test = 0;
  double mean_train = 0.0;
  double mean_test = 0.0;
  /// mean_train - mean_test; NaN when the class is absent from a split.
  double drift = 0.0;
  std::vector<float> train_sample;
  std::vector<float> test_sample;
};

struct DriftReport {
  std::vector<ClassDrift> classes;
};

/// P_c collected at the masked voxels of every case in each split.
DriftReport confidence_drift(std::span<const ConfidenceCase> train, std::span<const ConfidenceCase> test,
                             const DriftOptions& options = {});

// ---------------------------------------------------------------- case evaluation

struct ClassMetrics {
  int class_id = 0;
  double dsc = 0.0;
  double hd95_mm = 0.0;        // NaN when undefined
  double surface_dice = 0.0;   // NaN when no tolerance was given for the class
  bool empty_pred = false;
  bool empty_gt = false;
};

struct CaseMetrics {
  std::string case_id;
  std::vector<ClassMetrics> classes;
};

struct MetricSummary {
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  int n = 0;
  /// Values left out because they were undefined.
  int excluded = 0;
};

struct ClassAggregate {
  int class_id = 0;  // -1 for the pooled average row
  std::string name;
  MetricSummary dsc;
  MetricSummary hd95_mm;
  MetricSummary surface_dice;
};

struct EvalReport {
  std::vector<CaseMetrics> cases;
  std::vector<ClassAggregate> per_class;
  /// Pooled over all (case, class) pairs.
  ClassAggregate average;
  std::vector<std::string> class_names;
};

struct LabeledCase {
  std::string id;
  LabelVolume volume;
};

struct EvalOptions {
  /// Surface-Dice tolerance per class in mm. Classes without an entry get no surface Dice.
  std::map<int, double> tau_mm;
  bool postprocess = false;
  /// Classes to evaluate; empty means every foreground class seen in either set.
  std::vector<int> classes;
};

EvalReport evaluate_cases(std::span<const LabeledCase> predictions, std::span<const LabeledCase> references,
                          const EvalOptions& options = {});

/// Recomputes the per-class and pooled aggregates from report.cases.
void aggregate(EvalReport& report);

struct ComparisonRow {
  int class_id = 0;  // -1 for the pooled rows
  std::string metric;  // "dsc", "hd95_mm" or "surface_dice"
  int pairs = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  WilcoxonResult test;
};

/// Paired signed-rank tests between two configurations, per class and pooled, for each
/// metric. Pairs are matched on (case, class) and skipped when either value is undefined.
std::vector<ComparisonRow> compare_reports(const EvalReport& a, const EvalReport& b, double alpha = 0.05);

}  // namespace imbal
