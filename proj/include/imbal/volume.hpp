#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace imbal {

/// Base error for contract violations (bad shapes, malformed files, ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for file-system and format problems; the CLI maps it to exit code 2.
class IoError : public Error {
 public:
  using Error::Error;
};

using Label = std::uint16_t;

/// Voxel counts along x, y, z.
struct Dims {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;

  std::int64_t voxels() const { return nx * ny * nz; }
  std::int64_t operator[](int axis) const { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  std::int64_t& operator[](int axis) { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Physical voxel size in mm.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  double sz = 1.0;

  double operator[](int axis) const { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Linear index with x varying fastest.
inline std::int64_t linear_index(const Dims& d, std::int64_t x, std::int64_t y, std::int64_t z) {
  return x + d.nx * (y + d.ny * z);
}

/// 3D class map. Class 0 is background; ids run 0..num_classes()-1.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, Spacing spacing, std::vector<Label> data,
              std::vector<std::string> class_names = {});
  /// All-background volume.
  LabelVolume(Dims dims, Spacing spacing, std::vector<std::string> class_names = {});

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  std::span<const Label> data() const { return data_; }
  std::span<Label> data() { return data_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_class_names(std::vector<std::string> names);

  Label at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data_[static_cast<std::size_t>(linear_index(dims_, x, y, z))];
  }
  Label& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data_[static_cast<std::size_t>(linear_index(dims_, x, y, z))];
  }

  /// Largest class id present plus one, or the number of named classes if larger.
  int num_classes() const;
  Label max_label() const;

  /// Voxel count of every class id in [0, num_classes).
  std::vector<std::int64_t> class_counts(int num_classes) const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<Label> data_;
  std::vector<std::string> class_names_;
};

/// Per-class probability field. Storage is channel-outermost, then z, y, x.
template <typename Scalar>
class BasicProbVolume {
 public:
  using scalar_type = Scalar;

  BasicProbVolume() = default;
  BasicProbVolume(Dims dims, Spacing spacing, int channels)
      : dims_(dims), spacing_(spacing), channels_(channels),
        data_(static_cast<std::size_t>(dims.voxels() * channels), Scalar(0)) {
    check();
  }
  BasicProbVolume(Dims dims, Spacing spacing, int channels, std::vector<Scalar> data)
      : dims_(dims), spacing_(spacing), channels_(channels), data_(std::move(data)) {
    check();
    if (data_.size() != static_cast<std::size_t>(dims.voxels() * channels))
      throw Error("probability volume: payload length does not match dims x channels");
  }

  const Dims& dims() const { return dims_; }
  const Spacing& spacing() const { return spacing_; }
  int channels() const { return channels_; }
  std::int64_t voxels() const { return dims_.voxels(); }

  std::span<const Scalar> data() const { return data_; }
  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> channel(int c) const {
    return std::span<const Scalar>(data_).subspan(static_cast<std::size_t>(c * voxels()),
                                                  static_cast<std::size_t>(voxels()));
  }
  std::span<Scalar> channel(int c) {
    return std::span<Scalar>(data_).subspan(static_cast<std::size_t>(c * voxels()),
                                            static_cast<std::size_t>(voxels()));
  }
  Scalar at(int c, std::int64_t v) const { return data_[static_cast<std::size_t>(c * voxels() + v)]; }
  Scalar& at(int c, std::int64_t v) { return data_[static_cast<std::size_t>(c * voxels() + v)]; }

  /// True if every voxel's channel sum lies within tol of 1 and all entries are in [0,1].
  bool is_normalized(double tol = 1e-5) const {
    for (std::int64_t v = 0; v < voxels(); ++v) {
      double sum = 0.0;
      for (int c = 0; c < channels_; ++c) {
        const double p = at(c, v);
        if (!(p >= 0.0 && p <= 1.0)) return false;
        sum += p;
      }
      if (sum < 1.0 - tol || sum > 1.0 + tol) return false;
    }
    return true;
  }

  template <typename Other>
  BasicProbVolume<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return BasicProbVolume<Other>(dims_, spacing_, channels_, std::move(out));
  }

  friend bool operator==(const BasicProbVolume&, const BasicProbVolume&) = default;

 private:
  void check() const {
    if (dims_.nx < 1 || dims_.ny < 1 || dims_.nz < 1) throw Error("probability volume: dims must be >= 1");
    if (channels_ < 1) throw Error("probability volume: channels must be >= 1");
    if (!(spacing_.sx > 0 && spacing_.sy > 0 && spacing_.sz > 0))
      throw Error("probability volume: spacing must be positive");
  }

  Dims dims_;
  Spacing spacing_;
  int channels_ = 0;
  std::vector<Scalar> data_;
};

using ProbVolume = BasicProbVolume<float>;
using ProbVolumeD = BasicProbVolume<double>;

enum class OrganShape { Box, Ellipsoid };

/// One painted organ. Center and radii are in voxel units; voxel centers sit at integer
/// coordinates. A box covers |x - c| < r per axis, an ellipsoid sum(((x - c) / r)^2) <= 1.
struct OrganSpec {
  Label class_id = 1;
  OrganShape shape = OrganShape::Box;
  std::array<double, 3> center{};
  std::array<double, 3> radii{};
};

struct PhantomSpec {
  Dims dims;
  Spacing spacing;
  std::vector<OrganSpec> organs;
  /// Max random shift of organ centers in voxels, drawn from the seed. Zero keeps the
  /// phantom independent of the seed.
  double center_jitter = 0.0;
  std::vector<std::string> class_names;
};

struct Phantom {
  LabelVolume volume;
  /// Voxels painted by each organ, in paint order (before later overwrites).
  std::vector<std::int64_t> organ_voxels;
  /// Final voxel count per class id.
  std::vector<std::int64_t> class_counts;
};

/// Paints organs in list order; later organs overwrite earlier ones.
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed);

/// A reproducible multi-organ head-and-neck-like layout: one large organ, a few mid-size
/// ellipsoids and some thin small ones, all strictly inside the volume.
PhantomSpec random_phantom_spec(Dims dims, Spacing spacing, int organs, std::uint64_t seed);

/// Statistic used per axis group when deriving the target spacing.
struct SpacingRule {
  double in_plane_percentile = 50.0;
  double out_plane_percentile = 10.0;
};

Spacing compute_target_spacing(std::span<const Spacing> spacings, const SpacingRule& rule = {});
Spacing compute_target_spacing(std::span<const LabelVolume> volumes, const SpacingRule& rule = {});

/// Output dims for a change of spacing: round(n * old / new), at least 1.
Dims resampled_dims(const Dims& dims, const Spacing& from, const Spacing& to);

/// Nearest-neighbour resampling on voxel centers.
LabelVolume resample(const LabelVolume& volume, const Spacing& target);

/// Trilinear resampling on voxel centers, then clamping to [0,1] and per-voxel renormalization.
template <typename Scalar>
BasicProbVolume<Scalar> resample(const BasicProbVolume<Scalar>& volume, const Spacing& target);

/// One channel per class, 1 where the label matches.
ProbVolume one_hot(const LabelVolume& volume, int num_classes);

/// Per-voxel arg max over channels; ties resolve to the lowest channel.
template <typename Scalar>
LabelVolume argmax(const BasicProbVolume<Scalar>& volume);

}  // namespace imbal
