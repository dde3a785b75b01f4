#include "imbal/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "imbal/rng.hpp"
#include "imbal/stats.hpp"

namespace imbal {

namespace {

void check_geometry(const Dims& dims, const Spacing& spacing) {
  if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1) throw Error("volume dims must be >= 1 on every axis");
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0))
    throw Error("volume spacing must be positive on every axis");
}

}  // namespace

LabelVolume::LabelVolume(Dims dims, Spacing spacing, std::vector<Label> data,
                         std::vector<std::string> class_names)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_geometry(dims_, spacing_);
  if (data_.size() != static_cast<std::size_t>(dims_.voxels()))
    throw Error("label volume: data length " + std::to_string(data_.size()) + " != nx*ny*nz = " +
                std::to_string(dims_.voxels()));
  set_class_names(std::move(class_names));
}

LabelVolume::LabelVolume(Dims dims, Spacing spacing, std::vector<std::string> class_names)
    : LabelVolume(dims, spacing, std::vector<Label>(static_cast<std::size_t>(std::max<std::int64_t>(dims.voxels(), 0)), 0),
                  std::move(class_names)) {}

void LabelVolume::set_class_names(std::vector<std::string> names) {
  if (!names.empty() && static_cast<std::size_t>(max_label()) >= names.size())
    throw Error("label volume: class id " + std::to_string(max_label()) + " has no entry in class_names (" +
                std::to_string(names.size()) + " names)");
  class_names_ = std::move(names);
}

Label LabelVolume::max_label() const {
  Label m = 0;
  for (Label v : data_) m = std::max(m, v);
  return m;
}

int LabelVolume::num_classes() const {
  return std::max(static_cast<int>(max_label()) + 1, static_cast<int>(class_names_.size()));
}

std::vector<std::int64_t> LabelVolume::class_counts(int num_classes) const {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (Label v : data_) {
    if (v >= num_classes) throw Error("class id " + std::to_string(v) + " out of range for " +
                                      std::to_string(num_classes) + " classes");
    ++counts[v];
  }
  return counts;
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  check_geometry(spec.dims, spec.spacing);
  LabelVolume vol(spec.dims, spec.spacing);
  Phantom out;
  out.organ_voxels.reserve(spec.organs.size());

  for (std::size_t i = 0; i < spec.organs.size(); ++i) {
    const OrganSpec& organ = spec.organs[i];
    if (organ.class_id == 0) throw Error("organ " + std::to_string(i) + ": class id 0 is reserved for background");
    std::array<double, 3> center = organ.center;
    if (spec.center_jitter > 0.0) {
      DrawStream rng(seed, 0xFA27u, i);
      for (double& c : center) c += (2.0 * rng.uniform01() - 1.0) * spec.center_jitter;
    }
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      const double r = organ.radii[static_cast<std::size_t>(a)];
      const double c = center[static_cast<std::size_t>(a)];
      if (!(r > 0.0)) throw Error("organ " + std::to_string(i) + ": radii must be positive");
      if (c - r < -0.5 || c + r > static_cast<double>(spec.dims[a]) - 0.5)
        throw Error("organ " + std::to_string(i) + " lies outside the volume bounds");
      lo[static_cast<std::size_t>(a)] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(c - r)));
      hi[static_cast<std::size_t>(a)] =
          std::min<std::int64_t>(spec.dims[a] - 1, static_cast<std::int64_t>(std::ceil(c + r)));
    }
    std::int64_t painted = 0;
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x) {
          const double dx = static_cast<double>(x) - center[0];
          const double dy = static_cast<double>(y) - center[1];
          const double dz = static_cast<double>(z) - center[2];
          bool inside;
          if (organ.shape == OrganShape::Box) {
            inside = std::abs(dx) < organ.radii[0] && std::abs(dy) < organ.radii[1] &&
                     std::abs(dz) < organ.radii[2];
          } else {
            const double ex = dx / organ.radii[0], ey = dy / organ.radii[1], ez = dz / organ.radii[2];
            inside = ex * ex + ey * ey + ez * ez <= 1.0;
          }
          if (inside) {
            vol.at(x, y, z) = organ.class_id;
            ++painted;
          }
        }
    out.organ_voxels.push_back(painted);
  }

  if (!spec.class_names.empty()) vol.set_class_names(spec.class_names);
  out.class_counts = vol.class_counts(vol.num_classes());
  out.volume = std::move(vol);
  return out;
}

PhantomSpec random_phantom_spec(Dims dims, Spacing spacing, int organs, std::uint64_t seed) {
  if (organs < 0) throw Error("organ count must be non-negative");
  PhantomSpec spec;
  spec.dims = dims;
  spec.spacing = spacing;
  spec.class_names.push_back("background");
  DrawStream rng(seed, 0x9A47u, 0);
  for (int i = 0; i < organs; ++i) {
    OrganSpec organ;
    organ.class_id = static_cast<Label>(i + 1);
    organ.shape = (i % 3 == 2) ? OrganShape::Box : OrganShape::Ellipsoid;
    // Organ 1 is large, the rest shrink geometrically to mimic the HAN size spread.
    const double scale = (i == 0) ? 0.22 : 0.12 / (1.0 + 0.6 * i);
    for (std::size_t a = 0; a < 3; ++a) {
      const double n = static_cast<double>(dims[static_cast<int>(a)]);
      const double r = std::max(0.75, scale * n * (0.7 + 0.6 * rng.uniform01()));
      const double r_fit = std::min(r, 0.5 * n - 0.75);
      organ.radii[a] = std::max(0.6, r_fit);
      const double lo = organ.radii[a] + 0.25;
      const double hi = n - 1.25 - organ.radii[a];
      organ.center[a] = hi > lo ? lo + (hi - lo) * rng.uniform01() : 0.5 * (n - 1.0);
    }
    spec.organs.push_back(organ);
    spec.class_names.push_back("organ_" + std::to_string(i + 1));
  }
  return spec;
}

Spacing compute_target_spacing(std::span<const Spacing> spacings, const SpacingRule& rule) {
  if (spacings.empty()) throw Error("target spacing: empty volume list");
  std::vector<double> sx, sy, sz;
  for (const Spacing& s : spacings) {
    sx.push_back(s.sx);
    sy.push_back(s.sy);
    sz.push_back(s.sz);
  }
  return {percentile(sx, rule.in_plane_percentile), percentile(sy, rule.in_plane_percentile),
          percentile(sz, rule.out_plane_percentile)};
}

Spacing compute_target_spacing(std::span<const LabelVolume> volumes, const SpacingRule& rule) {
  std::vector<Spacing> spacings;
  spacings.reserve(volumes.size());
  for (const LabelVolume& v : volumes) spacings.push_back(v.spacing());
  return compute_target_spacing(spacings, rule);
}

Dims resampled_dims(const Dims& dims, const Spacing& from, const Spacing& to) {
  if (!(to.sx > 0 && to.sy > 0 && to.sz > 0)) throw Error("target spacing must be positive");
  Dims out;
  for (int a = 0; a < 3; ++a)
    out[a] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(dims[a]) * from[a] / to[a])));
  return out;
}

namespace {

// Continuous source index of output voxel k: (k + 0.5) * new/old - 0.5.
std::vector<double> source_coords(std::int64_t n_out, double from, double to) {
  const double ratio = to / from;
  std::vector<double> coords(static_cast<std::size_t>(n_out));
  for (std::int64_t k = 0; k < n_out; ++k)
    coords[static_cast<std::size_t>(k)] = (static_cast<double>(k) + 0.5) * ratio - 0.5;
  return coords;
}

std::vector<std::int64_t> nearest_indices(std::int64_t n_out, std::int64_t n_in, double from, double to) {
  std::vector<std::int64_t> idx;
  idx.reserve(static_cast<std::size_t>(n_out));
  for (double c : source_coords(n_out, from, to))
    idx.push_back(std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(c + 0.5)), 0, n_in - 1));
  return idx;
}

struct LinearTap {
  std::int64_t i0, i1;
  double w1;
};

std::vector<LinearTap> linear_taps(std::int64_t n_out, std::int64_t n_in, double from, double to) {
  std::vector<LinearTap> taps;
  taps.reserve(static_cast<std::size_t>(n_out));
  for (double c : source_coords(n_out, from, to)) {
    const double clamped = std::clamp(c, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::int64_t>(std::floor(clamped));
    const std::int64_t i1 = std::min(i0 + 1, n_in - 1);
    taps.push_back({i0, i1, clamped - static_cast<double>(i0)});
  }
  return taps;
}

}  // namespace

LabelVolume resample(const LabelVolume& volume, const Spacing& target) {
  if (volume.spacing() == target) return volume;
  const Dims& in = volume.dims();
  const Dims out = resampled_dims(in, volume.spacing(), target);
  const auto ix = nearest_indices(out.nx, in.nx, volume.spacing().sx, target.sx);
  const auto iy = nearest_indices(out.ny, in.ny, volume.spacing().sy, target.sy);
  const auto iz = nearest_indices(out.nz, in.nz, volume.spacing().sz, target.sz);
  std::vector<Label> data(static_cast<std::size_t>(out.voxels()));
  std::size_t k = 0;
  for (std::int64_t z = 0; z < out.nz; ++z)
    for (std::int64_t y = 0; y < out.ny; ++y)
      for (std::int64_t x = 0; x < out.nx; ++x)
        data[k++] = volume.at(ix[static_cast<std::size_t>(x)], iy[static_cast<std::size_t>(y)],
                              iz[static_cast<std::size_t>(z)]);
  return LabelVolume(out, target, std::move(data), volume.class_names());
}

template <typename Scalar>
BasicProbVolume<Scalar> resample(const BasicProbVolume<Scalar>& volume, const Spacing& target) {
  if (volume.spacing() == target) return volume;
  const Dims& in = volume.dims();
  const Dims out = resampled_dims(in, volume.spacing(), target);
  const auto tx = linear_taps(out.nx, in.nx, volume.spacing().sx, target.sx);
  const auto ty = linear_taps(out.ny, in.ny, volume.spacing().sy, target.sy);
  const auto tz = linear_taps(out.nz, in.nz, volume.spacing().sz, target.sz);
  const int channels = volume.channels();
  BasicProbVolume<Scalar> result(out, target, channels);
  std::vector<double> cell(static_cast<std::size_t>(channels));

  std::int64_t v = 0;
  for (std::int64_t z = 0; z < out.nz; ++z) {
    const LinearTap& cz = tz[static_cast<std::size_t>(z)];
    for (std::int64_t y = 0; y < out.ny; ++y) {
      const LinearTap& cy = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < out.nx; ++x, ++v) {
        const LinearTap& cx = tx[static_cast<std::size_t>(x)];
        double sum = 0.0;
        for (int c = 0; c < channels; ++c) {
          auto src = [&](std::int64_t xx, std::int64_t yy, std::int64_t zz) {
            return static_cast<double>(volume.at(c, linear_index(in, xx, yy, zz)));
          };
          const double c00 = src(cx.i0, cy.i0, cz.i0) * (1 - cx.w1) + src(cx.i1, cy.i0, cz.i0) * cx.w1;
          const double c10 = src(cx.i0, cy.i1, cz.i0) * (1 - cx.w1) + src(cx.i1, cy.i1, cz.i0) * cx.w1;
          const double c01 = src(cx.i0, cy.i0, cz.i1) * (1 - cx.w1) + src(cx.i1, cy.i0, cz.i1) * cx.w1;
          const double c11 = src(cx.i0, cy.i1, cz.i1) * (1 - cx.w1) + src(cx.i1, cy.i1, cz.i1) * cx.w1;
          const double c0 = c00 * (1 - cy.w1) + c10 * cy.w1;
          const double c1 = c01 * (1 - cy.w1) + c11 * cy.w1;
          const double value = std::clamp(c0 * (1 - cz.w1) + c1 * cz.w1, 0.0, 1.0);
          cell[static_cast<std::size_t>(c)] = value;
          sum += value;
        }
        for (int c = 0; c < channels; ++c) {
          const double value = sum > 0.0 ? cell[static_cast<std::size_t>(c)] / sum : 1.0 / channels;
          result.at(c, v) = static_cast<Scalar>(value);
        }
      }
    }
  }
  return result;
}

template ProbVolume resample(const ProbVolume&, const Spacing&);
template ProbVolumeD resample(const ProbVolumeD&, const Spacing&);

ProbVolume one_hot(const LabelVolume& volume, int num_classes) {
  if (num_classes < 1) throw Error("one_hot: need at least one class");
  ProbVolume out(volume.dims(), volume.spacing(), num_classes);
  const auto data = volume.data();
  for (std::size_t v = 0; v < data.size(); ++v) {
    if (data[v] >= num_classes)
      throw Error("one_hot: class id " + std::to_string(data[v]) + " out of range for " +
                  std::to_string(num_classes) + " classes");
    out.at(data[v], static_cast<std::int64_t>(v)) = 1.0f;
  }
  return out;
}

template <typename Scalar>
LabelVolume argmax(const BasicProbVolume<Scalar>& volume) {
  std::vector<Label> data(static_cast<std::size_t>(volume.voxels()));
  for (std::int64_t v = 0; v < volume.voxels(); ++v) {
    int best = 0;
    for (int c = 1; c < volume.channels(); ++c)
      if (volume.at(c, v) > volume.at(best, v)) best = c;
    data[static_cast<std::size_t>(v)] = static_cast<Label>(best);
  }
  return LabelVolume(volume.dims(), volume.spacing(), std::move(data));
}

template LabelVolume argmax(const ProbVolume&);
template LabelVolume argmax(const ProbVolumeD&);

}  // namespace imbal
