#include "imbal/loss.hpp"

#include <cmath>
#include <limits>

namespace imbal {

void PatchBatch::validate() const {
  if (pred.empty()) throw Error("patch batch is empty");
  if (pred.size() != target.size())
    throw Error("patch batch: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(target.size()) +
                " targets");
  const Eigen::Index c = pred.front().rows(), v = pred.front().cols();
  if (c < 1 || v < 1) throw Error("patch batch: items need at least one channel and one voxel");
  for (std::size_t b = 0; b < pred.size(); ++b) {
    if (pred[b].rows() != c || pred[b].cols() != v || target[b].rows() != c || target[b].cols() != v)
      throw Error("patch batch: shape mismatch at item " + std::to_string(b) + " (expected " + std::to_string(c) +
                  " channels x " + std::to_string(v) + " voxels)");
  }
}

namespace {

ChannelArray to_array(const ProbVolume& vol) {
  ChannelArray a(vol.channels(), vol.voxels());
  for (int c = 0; c < vol.channels(); ++c)
    for (std::int64_t v = 0; v < vol.voxels(); ++v) a(c, v) = vol.at(c, v);
  return a;
}

}  // namespace

void PatchBatch::add(const ProbVolume& prediction, const LabelVolume& truth) {
  if (truth.dims() != prediction.dims()) throw Error("patch batch: prediction and label volumes differ in dims");
  if (truth.max_label() >= prediction.channels())
    throw Error("patch batch: label " + std::to_string(truth.max_label()) + " needs more than the " +
                std::to_string(prediction.channels()) + " prediction channels");
  add(prediction, one_hot(truth, prediction.channels()));
}

void PatchBatch::add(const ProbVolume& prediction, const ProbVolume& one_hot_truth) {
  if (prediction.dims() != one_hot_truth.dims() || prediction.channels() != one_hot_truth.channels())
    throw Error("patch batch: prediction and target volumes differ in dims or channels");
  pred.push_back(to_array(prediction));
  target.push_back(to_array(one_hot_truth));
}

ChannelArray softmax(const ChannelArray& logits) {
  ChannelArray out(logits.rows(), logits.cols());
  for (Eigen::Index v = 0; v < logits.cols(); ++v) {
    const double shift = logits.col(v).maxCoeff();
    out.col(v) = (logits.col(v) - shift).exp();
    out.col(v) /= out.col(v).sum();
  }
  return out;
}

ChannelArray softmax_jvp(const ChannelArray& probs, const ChannelArray& tangent) {
  ChannelArray out(probs.rows(), probs.cols());
  for (Eigen::Index v = 0; v < probs.cols(); ++v) {
    const double dot = (probs.col(v) * tangent.col(v)).sum();
    out.col(v) = probs.col(v) * (tangent.col(v) - dot);
  }
  return out;
}

template <typename Scalar>
BasicProbVolume<Scalar> softmax(const BasicProbVolume<Scalar>& logits) {
  BasicProbVolume<Scalar> out(logits.dims(), logits.spacing(), logits.channels());
  const int channels = logits.channels();
  std::vector<double> buf(static_cast<std::size_t>(channels));
  for (std::int64_t v = 0; v < logits.voxels(); ++v) {
    double shift = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < channels; ++c) shift = std::max(shift, static_cast<double>(logits.at(c, v)));
    double sum = 0.0;
    for (int c = 0; c < channels; ++c) {
      buf[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(logits.at(c, v)) - shift);
      sum += buf[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < channels; ++c) out.at(c, v) = static_cast<Scalar>(buf[static_cast<std::size_t>(c)] / sum);
  }
  return out;
}

template ProbVolume softmax(const ProbVolume&);
template ProbVolumeD softmax(const ProbVolumeD&);

LossResult ce_loss(const PatchBatch& batch, const LossConfig& cfg) {
  batch.validate();
  const int channels = batch.channels();
  double norm = 1.0 / batch.batch();
  if (cfg.ce_normalization == CeNormalization::BatchAndVoxel) norm /= static_cast<double>(batch.voxels());

  LossResult r;
  r.per_class_terms = Eigen::VectorXd::Zero(channels);
  r.per_class_counts = Eigen::VectorXi::Constant(channels, batch.batch());
  r.gradient.reserve(static_cast<std::size_t>(batch.batch()));
  for (int b = 0; b < batch.batch(); ++b) {
    const ChannelArray& p = batch.pred[static_cast<std::size_t>(b)];
    const ChannelArray& g = batch.target[static_cast<std::size_t>(b)];
    const ChannelArray clipped = p.max(cfg.ce_clip).min(1.0);
    r.per_class_terms -= norm * (g * clipped.log()).rowwise().sum().matrix();
    r.gradient.push_back(-norm * g / clipped);
  }
  r.value = r.per_class_terms.sum();
  return r;
}

namespace {

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

void finish_dice(LossResult& r, const LossConfig& cfg, double score) {
  if (cfg.dice_output == DiceOutput::OneMinusScore) {
    r.value = 1.0 - score;
    for (ChannelArray& g : r.gradient) g = -g;
  } else {
    r.value = score;
  }
}

std::vector<ChannelArray> zero_gradient(const PatchBatch& batch) {
  return std::vector<ChannelArray>(static_cast<std::size_t>(batch.batch()),
                                   ChannelArray::Zero(batch.channels(), batch.voxels()));
}

}  // namespace

LossResult dice_score(const PatchBatch& batch, const LossConfig& cfg) {
  batch.validate();
  if (!(cfg.epsilon > 0.0)) throw Error("epsilon must be positive");
  const int channels = batch.channels();
  const int first = cfg.dice_include_background ? 0 : 1;
  const int classes = channels - first;
  if (classes < 1) throw Error("dice_score: no channel left after excluding background");
  const double scale = 1.0 / (static_cast<double>(batch.batch()) * classes);

  LossResult r;
  r.per_class_terms = Eigen::VectorXd::Constant(channels, nan());
  r.per_class_counts = Eigen::VectorXi::Zero(channels);
  r.gradient = zero_gradient(batch);
  double score = 0.0;
  for (int c = first; c < channels; ++c) {
    double class_sum = 0.0;
    for (int b = 0; b < batch.batch(); ++b) {
      const auto p = batch.pred[static_cast<std::size_t>(b)].row(c);
      const auto g = batch.target[static_cast<std::size_t>(b)].row(c);
      const double inter = (p * g).sum();
      const double total = p.sum() + g.sum();
      const double term = (2.0 * inter + cfg.epsilon) / (total + cfg.epsilon);
      class_sum += term;
      ChannelArray& grad = r.gradient[static_cast<std::size_t>(b)];
      const double denom = total + cfg.epsilon;
      grad.row(c) += scale * (2.0 * g / denom - (2.0 * inter + cfg.epsilon) / (denom * denom));
    }
    r.per_class_terms(c) = class_sum / batch.batch();
    r.per_class_counts(c) = batch.batch();
    score += class_sum * scale;
  }
  finish_dice(r, cfg, score);
  return r;
}

LossResult nnu_dice(const PatchBatch& batch, const LossConfig& cfg) {
  batch.validate();
  if (!(cfg.epsilon > 0.0)) throw Error("epsilon must be positive");
  const int channels = batch.channels();
  const int first = cfg.nnu_include_background ? 0 : 1;
  const int classes = channels - first;
  if (classes < 1) throw Error("nnu_dice: needs at least one foreground class");
  const double scale = 1.0 / classes;

  LossResult r;
  r.per_class_terms = Eigen::VectorXd::Constant(channels, nan());
  r.per_class_counts = Eigen::VectorXi::Zero(channels);
  r.gradient = zero_gradient(batch);
  double score = 0.0;
  for (int c = first; c < channels; ++c) {
    double inter = 0.0, total = 0.0;
    for (int b = 0; b < batch.batch(); ++b) {
      const auto p = batch.pred[static_cast<std::size_t>(b)].row(c);
      const auto g = batch.target[static_cast<std::size_t>(b)].row(c);
      inter += (p * g).sum();
      total += p.sum() + g.sum();
    }
    const double denom = total + cfg.epsilon;
    const double term = (2.0 * inter + cfg.epsilon) / denom;
    for (int b = 0; b < batch.batch(); ++b) {
      const auto g = batch.target[static_cast<std::size_t>(b)].row(c);
      r.gradient[static_cast<std::size_t>(b)].row(c) +=
          scale * (2.0 * g / denom - (2.0 * inter + cfg.epsilon) / (denom * denom));
    }
    r.per_class_terms(c) = term;
    r.per_class_counts(c) = 1;
    score += scale * term;
  }
  finish_dice(r, cfg, score);
  return r;
}

LossResult ca_dice(const PatchBatch& batch, const LossConfig& cfg) {
  batch.validate();
  if (!(cfg.epsilon > 0.0)) throw Error("epsilon must be positive");
  const int channels = batch.channels();
  const int first = cfg.ca_include_background ? 0 : 1;

  struct Term {
    int b, c;
    double inter, total;
  };
  std::vector<Term> present;
  for (int b = 0; b < batch.batch(); ++b)
    for (int c = first; c < channels; ++c) {
      const auto p = batch.pred[static_cast<std::size_t>(b)].row(c);
      const auto g = batch.target[static_cast<std::size_t>(b)].row(c);
      const double g_mass = g.sum();
      if (g_mass > 0.0) present.push_back({b, c, (p * g).sum(), p.sum() + g_mass});
    }

  LossResult r;
  r.per_class_terms = Eigen::VectorXd::Constant(channels, nan());
  r.per_class_counts = Eigen::VectorXi::Zero(channels);
  r.gradient = zero_gradient(batch);
  r.n_present = static_cast<int>(present.size());
  if (present.empty()) {
    r.no_present_classes = true;
    finish_dice(r, cfg, 1.0);
    return r;
  }
  const double scale = 1.0 / r.n_present;
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(channels);
  double score = 0.0;
  for (const Term& t : present) {
    const double denom = t.total + cfg.epsilon;
    const double term = 2.0 * t.inter / denom;
    score += scale * term;
    sums(t.c) += term;
    r.per_class_counts(t.c) += 1;
    const auto g = batch.target[static_cast<std::size_t>(t.b)].row(t.c);
    r.gradient[static_cast<std::size_t>(t.b)].row(t.c) += scale * (2.0 * g / denom - 2.0 * t.inter / (denom * denom));
  }
  for (int c = 0; c < channels; ++c)
    if (r.per_class_counts(c) > 0) r.per_class_terms(c) = sums(c) / r.per_class_counts(c);
  finish_dice(r, cfg, score);
  return r;
}

LossResult dice_loss(const PatchBatch& batch, DiceVariant variant, const LossConfig& cfg) {
  switch (variant) {
    case DiceVariant::Plain: return dice_score(batch, cfg);
    case DiceVariant::Nnu: return nnu_dice(batch, cfg);
    case DiceVariant::Ca: return ca_dice(batch, cfg);
  }
  throw Error("unknown Dice variant");
}

LossResult combined_loss(const PatchBatch& batch, const LossConfig& cfg, DiceVariant variant, LossWeights weights) {
  if (!(weights.ce >= 0.0 && weights.dice >= 0.0) || (weights.ce == 0.0 && weights.dice == 0.0))
    throw Error("combined_loss: weights must be non-negative and not both zero");
  const LossResult ce = ce_loss(batch, cfg);
  const LossResult dice = dice_loss(batch, variant, cfg);
  LossResult r = dice;
  r.value = weights.ce * ce.value + weights.dice * dice.value;
  for (std::size_t b = 0; b < r.gradient.size(); ++b)
    r.gradient[b] = weights.ce * ce.gradient[b] + weights.dice * dice.gradient[b];
  return r;
}

std::string to_string(DiceVariant variant) {
  switch (variant) {
    case DiceVariant::Plain: return "plain";
    case DiceVariant::Nnu: return "nnu";
    case DiceVariant::Ca: return "ca";
  }
  return "plain";
}

DiceVariant parse_dice_variant(const std::string& text) {
  if (text == "plain") return DiceVariant::Plain;
  if (text == "nnu") return DiceVariant::Nnu;
  if (text == "ca") return DiceVariant::Ca;
  throw Error("Dice variant '" + text + "': expected plain, nnu or ca");
}

}  // namespace imbal
