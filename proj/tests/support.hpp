#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "imbal/loss.hpp"
#include "imbal/volume.hpp"

namespace imbal::testing {

/// Test-side generator, deliberately unrelated to the Philox stream used by the library.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(eng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng_); }
  bool coin(double p) { return real(0.0, 1.0) < p; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline Dims random_dims(Gen& g, std::int64_t lo, std::int64_t hi) {
  return {g.integer(lo, hi), g.integer(lo, hi), g.integer(lo, hi)};
}

inline Spacing random_spacing(Gen& g) {
  // Quarter-mm steps keep a mix of exactly representable and anisotropic spacings.
  return {0.25 * static_cast<double>(g.integer(2, 12)), 0.25 * static_cast<double>(g.integer(2, 12)),
          0.25 * static_cast<double>(g.integer(2, 16))};
}

/// Each voxel independently gets class c in [1, classes) with probability fill, else 0.
inline LabelVolume random_labels(Gen& g, Dims dims, Spacing spacing, int classes, double fill) {
  std::vector<Label> data(static_cast<std::size_t>(dims.voxels()));
  for (Label& v : data) v = g.coin(fill) ? static_cast<Label>(g.integer(1, classes - 1)) : Label{0};
  return LabelVolume(dims, spacing, std::move(data));
}

/// A fresh empty directory under the system temp path.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("imbal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Random probability rows bounded into [0.01, 0.99] per channel, then renormalized.
inline ChannelArray random_probs(Gen& g, int channels, Eigen::Index voxels) {
  ChannelArray p(channels, voxels);
  for (Eigen::Index v = 0; v < voxels; ++v) {
    for (int c = 0; c < channels; ++c) p(c, v) = g.real(0.01, 0.99);
    p.col(v) /= p.col(v).sum();
  }
  return p;
}

inline ChannelArray random_one_hot(Gen& g, int channels, Eigen::Index voxels, double absent_prob = 0.0) {
  std::vector<int> allowed;
  for (int c = 0; c < channels; ++c)
    if (c == 0 || !g.coin(absent_prob)) allowed.push_back(c);
  ChannelArray t = ChannelArray::Zero(channels, voxels);
  for (Eigen::Index v = 0; v < voxels; ++v)
    t(allowed[static_cast<std::size_t>(g.integer(0, static_cast<std::int64_t>(allowed.size()) - 1))], v) = 1.0;
  return t;
}

/// Central differences of a scalar loss with respect to every prediction entry. The step
/// is relative to the distance from the nearer probability bound, so p - h and p + h stay
/// inside (0, 1).
template <typename LossFn>
std::vector<ChannelArray> central_difference_gradient(const PatchBatch& batch, LossFn&& loss, double rel_step) {
  std::vector<ChannelArray> out;
  PatchBatch work = batch;
  for (std::size_t b = 0; b < batch.pred.size(); ++b) {
    ChannelArray g(batch.pred[b].rows(), batch.pred[b].cols());
    for (Eigen::Index v = 0; v < g.cols(); ++v)
      for (Eigen::Index c = 0; c < g.rows(); ++c) {
        const double p = batch.pred[b](c, v);
        const double h = rel_step * std::max(std::min(p, 1.0 - p), 1e-3);
        work.pred[b](c, v) = p + h;
        const double up = loss(work);
        work.pred[b](c, v) = p - h;
        const double down = loss(work);
        work.pred[b](c, v) = p;
        g(c, v) = (up - down) / (2.0 * h);
      }
    out.push_back(std::move(g));
  }
  return out;
}

/// Central differences at steps h, h/2 and h/4 combined by two Richardson rounds (error
/// O(h^6)). The large base step keeps cancellation small when the loss value is O(1) but
/// its gradient is tiny, e.g. 1 - Dice on patches without foreground.
template <typename LossFn>
std::vector<ChannelArray> finite_difference_gradient(const PatchBatch& batch, LossFn&& loss, double rel_step = 0.1) {
  auto d1 = central_difference_gradient(batch, loss, rel_step);
  const auto d2 = central_difference_gradient(batch, loss, rel_step / 2);
  const auto d4 = central_difference_gradient(batch, loss, rel_step / 4);
  for (std::size_t b = 0; b < d1.size(); ++b) {
    const ChannelArray coarse = (4.0 * d2[b] - d1[b]) / 3.0;
    const ChannelArray fine = (4.0 * d4[b] - d2[b]) / 3.0;
    d1[b] = (16.0 * fine - coarse) / 15.0;
  }
  return d1;
}

/// ||a - b|| / max(||a||, ||b||) over all batch items; 0 when both vanish.
inline double relative_error(const std::vector<ChannelArray>& a, const std::vector<ChannelArray>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]).square().sum();
    na += a[i].square().sum();
    nb += b[i].square().sum();
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

}  // namespace imbal::testing
