#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "imbal/volume.hpp"

namespace imbal {

/// Per-item tensor: one row per class channel, one column per voxel.
using ChannelArray = Eigen::ArrayXXd;

/// B prediction/target pairs sharing (channels, voxels). Targets are one-hot.
struct PatchBatch {
  std::vector<ChannelArray> pred;
  std::vector<ChannelArray> target;

  int batch() const { return static_cast<int>(pred.size()); }
  int channels() const { return pred.empty() ? 0 : static_cast<int>(pred.front().rows()); }
  Eigen::Index voxels() const { return pred.empty() ? 0 : pred.front().cols(); }

  /// Throws Error on empty batches or any shape disagreement.
  void validate() const;

  void add(const ProbVolume& prediction, const LabelVolume& truth);
  void add(const ProbVolume& prediction, const ProbVolume& one_hot_truth);
};

enum class CeNormalization {
  Batch,          // 1/B, as printed for the multi-class CE
  BatchAndVoxel,  // 1/(B*V), commensurate with Dice terms
};

enum class DiceOutput {
  Score,           // overlap score in [0, 1]
  OneMinusScore,   // loss = 1 - score
};

enum class DiceVariant { Plain, Nnu, Ca };

struct LossConfig {
  double epsilon = 1e-5;
  /// Background channel participates in the plain per-item Dice.
  bool dice_include_background = true;
  /// Background channel participates in the batch Dice (nnU-Net ignores it).
  bool nnu_include_background = false;
  /// Background channel participates in the class-adaptive Dice.
  bool ca_include_background = false;
  CeNormalization ce_normalization = CeNormalization::BatchAndVoxel;
  DiceOutput dice_output = DiceOutput::OneMinusScore;
  /// Probabilities are clamped to at least this before taking logs.
  double ce_clip = 1e-12;
};

struct LossResult {
  double value = 0.0;
  /// Per-channel terms. CE: each channel's share of the value. Plain/ca Dice: mean
  /// overlap over the contributing items (NaN if none). Batch Dice: the pooled overlap.
  Eigen::VectorXd per_class_terms;
  /// Number of (item, class) terms behind each per_class_terms entry.
  Eigen::VectorXi per_class_counts;
  /// d value / d pred, one array per batch item.
  std::vector<ChannelArray> gradient;
  /// Contributing (item, class) pairs; only meaningful for the class-adaptive Dice.
  int n_present = 0;
  /// Set when no (item, class) pair had ground truth and the score fell back to 1.
  bool no_present_classes = false;
};

/// Max-shifted softmax over the rows (channels) of each column.
ChannelArray softmax(const ChannelArray& logits);

/// Jacobian-vector product of softmax at `probs`: p * (v - sum_c p v). The Jacobian is
/// symmetric, so this also maps d loss / d probs to d loss / d logits.
ChannelArray softmax_jvp(const ChannelArray& probs, const ChannelArray& tangent);

/// Softmax over the channels of a logit volume.
template <typename Scalar>
BasicProbVolume<Scalar> softmax(const BasicProbVolume<Scalar>& logits);

LossResult ce_loss(const PatchBatch& batch, const LossConfig& cfg = {});
LossResult dice_score(const PatchBatch& batch, const LossConfig& cfg = {});
LossResult nnu_dice(const PatchBatch& batch, const LossConfig& cfg = {});
LossResult ca_dice(const PatchBatch& batch, const LossConfig& cfg = {});

LossResult dice_loss(const PatchBatch& batch, DiceVariant variant, const LossConfig& cfg = {});

struct LossWeights {
  double ce = 1.0;
  double dice = 1.0;
};

/// w_ce * CE + w_dice * Dice(variant); the Dice part follows cfg.dice_output.
LossResult combined_loss(const PatchBatch& batch, const LossConfig& cfg, DiceVariant variant,
                         LossWeights weights = {});

std::string to_string(DiceVariant variant);
DiceVariant parse_dice_variant(const std::string& text);

}  // namespace imbal
