#include "imbal/sampler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace imbal {

std::string PatchSpec::to_string() const {
  if (full_volume) return "full";
  return std::to_string(px) + "x" + std::to_string(py) + "x" + std::to_string(pz);
}

PatchSpec PatchSpec::parse(const std::string& text) {
  if (text == "full") return full();
  PatchSpec spec;
  std::array<std::int64_t, 3> v{};
  const char* p = text.data();
  const char* end = text.data() + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[static_cast<std::size_t>(i)]);
    if (ec != std::errc() || v[static_cast<std::size_t>(i)] < 1)
      throw Error("patch size '" + text + "': expected PXxPYxPZ with positive integers, or 'full'");
    p = next;
    if (i < 2) {
      if (p == end || (*p != 'x' && *p != 'X')) throw Error("patch size '" + text + "': expected PXxPYxPZ");
      ++p;
    }
  }
  if (p != end) throw Error("patch size '" + text + "': trailing characters");
  spec.px = v[0];
  spec.py = v[1];
  spec.pz = v[2];
  return spec;
}

std::string SamplingStrategy::to_string() const {
  if (kind == SamplingKind::Uniform) return "uniform";
  char buf[64];
  std::snprintf(buf, sizeof buf, "fg:%.17g", oversample_prob);
  return buf;
}

SamplingStrategy SamplingStrategy::parse(const std::string& text) {
  if (text == "uniform") return uniform();
  if (text.rfind("fg:", 0) == 0 || text == "fg") {
    double prob = 1.0 / 3.0;
    if (text.size() > 3) {
      try {
        std::size_t used = 0;
        prob = std::stod(text.substr(3), &used);
        if (used != text.size() - 3) throw Error("");
      } catch (const std::exception&) {
        throw Error("strategy '" + text + "': expected fg:PROB");
      }
    }
    if (!(prob >= 0.0 && prob <= 1.0)) throw Error("strategy '" + text + "': oversampling probability must be in [0,1]");
    return foreground(prob);
  }
  throw Error("strategy '" + text + "': expected 'uniform' or 'fg:PROB'");
}

std::vector<double> class_ratios(const LabelVolume& patch, int num_classes) {
  const auto counts = patch.class_counts(num_classes);
  const double v = static_cast<double>(patch.dims().voxels());
  std::vector<double> ratios(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) ratios[c] = static_cast<double>(counts[c]) / v;
  return ratios;
}

// ---------------------------------------------------------------- PatchGrid

PatchGrid::PatchGrid(const Dims& volume, const Dims& patch) : patch_(patch) {
  for (int a = 0; a < 3; ++a) {
    if (patch[a] < 1) throw Error("patch extent must be >= 1 on every axis");
    padded_[a] = std::max(volume[a], patch[a]);
    pad_before_[static_cast<std::size_t>(a)] = (padded_[a] - volume[a]) / 2;
  }
}

std::int64_t PatchGrid::origins_containing(int axis, std::int64_t x) const {
  const std::int64_t lo = std::max<std::int64_t>(0, x - patch_[axis] + 1);
  const std::int64_t hi = std::min(x, padded_[axis] - patch_[axis]);
  return std::max<std::int64_t>(0, hi - lo + 1);
}

// ---------------------------------------------------------------- PatchSampler

int common_num_classes(std::span<const LabelVolume> volumes) {
  int k = 1;
  for (const LabelVolume& v : volumes) k = std::max(k, v.num_classes());
  return k;
}

PatchSampler::PatchSampler(const LabelVolume& volume, const PatchSpec& spec, int num_classes)
    : volume_(&volume), grid_(volume.dims(), spec.extent_for(volume.dims())),
      num_classes_(std::max(num_classes, volume.num_classes())) {
  const Dims& d = volume.dims();
  tables_.resize(static_cast<std::size_t>(num_classes_));
  for (auto& t : tables_) {
    t.lo = {d.nx, d.ny, d.nz};
    t.hi = {-1, -1, -1};
  }
  const auto data = volume.data();
  std::int64_t v = 0;
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x, ++v) {
        const Label c = data[static_cast<std::size_t>(v)];
        if (c == 0) continue;
        foreground_.push_back(v);
        ClassTable& t = tables_[c];
        t.empty = false;
        t.lo = {std::min(t.lo[0], x), std::min(t.lo[1], y), std::min(t.lo[2], z)};
        t.hi = {std::max(t.hi[0], x), std::max(t.hi[1], y), std::max(t.hi[2], z)};
      }

  for (int c = 1; c < num_classes_; ++c) {
    ClassTable& t = tables_[static_cast<std::size_t>(c)];
    if (t.empty) continue;
    const std::int64_t bx = t.hi[0] - t.lo[0] + 1, by = t.hi[1] - t.lo[1] + 1, bz = t.hi[2] - t.lo[2] + 1;
    const std::int64_t sx = bx + 1, sy = by + 1;
    t.prefix.assign(static_cast<std::size_t>(sx * sy * (bz + 1)), 0);
    auto at = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> std::int64_t& {
      return t.prefix[static_cast<std::size_t>(x + sx * (y + sy * z))];
    };
    for (std::int64_t z = 1; z <= bz; ++z)
      for (std::int64_t y = 1; y <= by; ++y)
        for (std::int64_t x = 1; x <= bx; ++x) {
          const std::int64_t hit =
              volume.at(t.lo[0] + x - 1, t.lo[1] + y - 1, t.lo[2] + z - 1) == c ? 1 : 0;
          at(x, y, z) = hit + at(x - 1, y, z) + at(x, y - 1, z) + at(x, y, z - 1) - at(x - 1, y - 1, z) -
                        at(x - 1, y, z - 1) - at(x, y - 1, z - 1) + at(x - 1, y - 1, z - 1);
        }
  }
}

std::int64_t PatchSampler::box_count(const ClassTable& t, std::array<std::int64_t, 3> lo,
                                     std::array<std::int64_t, 3> hi) const {
  if (t.empty) return 0;
  for (std::size_t a = 0; a < 3; ++a) {
    lo[a] = std::max(lo[a], t.lo[a]) - t.lo[a];
    hi[a] = std::min(hi[a], t.hi[a]) - t.lo[a];
    if (hi[a] < lo[a]) return 0;
  }
  const std::int64_t sx = t.hi[0] - t.lo[0] + 2, sy = t.hi[1] - t.lo[1] + 2;
  auto s = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return t.prefix[static_cast<std::size_t>(x + sx * (y + sy * z))];
  };
  const std::int64_t x0 = lo[0], y0 = lo[1], z0 = lo[2];
  const std::int64_t x1 = hi[0] + 1, y1 = hi[1] + 1, z1 = hi[2] + 1;
  return s(x1, y1, z1) - s(x0, y1, z1) - s(x1, y0, z1) - s(x1, y1, z0) + s(x0, y0, z1) + s(x0, y1, z0) +
         s(x1, y0, z0) - s(x0, y0, z0);
}

std::vector<std::int64_t> PatchSampler::counts(const std::array<std::int64_t, 3>& origin) const {
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[static_cast<std::size_t>(a)] = origin[static_cast<std::size_t>(a)] - grid_.pad_before(a);
    hi[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + grid_.patch()[a] - 1;
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(num_classes_), 0);
  std::int64_t foreground = 0;
  for (int c = 1; c < num_classes_; ++c) {
    out[static_cast<std::size_t>(c)] = box_count(tables_[static_cast<std::size_t>(c)], lo, hi);
    foreground += out[static_cast<std::size_t>(c)];
  }
  out[0] = grid_.patch().voxels() - foreground;
  return out;
}

LabelVolume PatchSampler::extract(const std::array<std::int64_t, 3>& origin) const {
  const Dims p = grid_.patch();
  const Dims& d = volume_->dims();
  LabelVolume patch(p, volume_->spacing(), volume_->class_names());
  for (std::int64_t z = 0; z < p.nz; ++z)
    for (std::int64_t y = 0; y < p.ny; ++y)
      for (std::int64_t x = 0; x < p.nx; ++x) {
        const std::int64_t sx = origin[0] + x - grid_.pad_before(0);
        const std::int64_t sy = origin[1] + y - grid_.pad_before(1);
        const std::int64_t sz = origin[2] + z - grid_.pad_before(2);
        if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz) continue;
        patch.at(x, y, z) = volume_->at(sx, sy, sz);
      }
  return patch;
}

PatchDraw PatchSampler::draw(const SamplingStrategy& strategy, DrawStream& rng) const {
  PatchDraw out;
  if (strategy.kind == SamplingKind::ForegroundOversample) {
    const double coin = rng.uniform01();
    if (coin < strategy.oversample_prob) {
      if (foreground_.empty()) {
        out.fallback = true;
      } else {
        const std::int64_t v = foreground_[static_cast<std::size_t>(
            rng.uniform_index(static_cast<std::uint64_t>(foreground_.size())))];
        const Dims& d = volume_->dims();
        const std::array<std::int64_t, 3> voxel{v % d.nx, (v / d.nx) % d.ny, v / (d.nx * d.ny)};
        for (int a = 0; a < 3; ++a) {
          const std::int64_t xp = voxel[static_cast<std::size_t>(a)] + grid_.pad_before(a);
          const std::int64_t lo = std::max<std::int64_t>(0, xp - grid_.patch()[a] + 1);
          const std::int64_t hi = std::min(xp, grid_.padded()[a] - grid_.patch()[a]);
          out.origin[static_cast<std::size_t>(a)] =
              lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
        }
        out.foreground_forced = true;
        return out;
      }
    }
  }
  for (int a = 0; a < 3; ++a)
    out.origin[static_cast<std::size_t>(a)] =
        static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(grid_.origins(a))));
  return out;
}

std::vector<double> PatchSampler::expected_ratios(const SamplingStrategy& strategy) const {
  const Dims& d = volume_->dims();
  const auto k = static_cast<std::size_t>(num_classes_);
  const double patch_voxels = static_cast<double>(grid_.patch().voxels());

  // Per-axis multiplicity of origins covering each original coordinate.
  std::array<std::vector<double>, 3> cover;
  for (int a = 0; a < 3; ++a) {
    auto& m = cover[static_cast<std::size_t>(a)];
    m.resize(static_cast<std::size_t>(d[a]));
    for (std::int64_t x = 0; x < d[a]; ++x)
      m[static_cast<std::size_t>(x)] = static_cast<double>(grid_.origins_containing(a, x + grid_.pad_before(a)));
  }

  std::vector<double> uniform(k, 0.0);
  {
    std::vector<double> weighted(k, 0.0);
    const auto data = volume_->data();
    std::int64_t v = 0;
    for (std::int64_t z = 0; z < d.nz; ++z)
      for (std::int64_t y = 0; y < d.ny; ++y) {
        const double wyz = cover[1][static_cast<std::size_t>(y)] * cover[2][static_cast<std::size_t>(z)];
        for (std::int64_t x = 0; x < d.nx; ++x, ++v) {
          const Label c = data[static_cast<std::size_t>(v)];
          if (c != 0) weighted[c] += cover[0][static_cast<std::size_t>(x)] * wyz;
        }
      }
    const double denom = static_cast<double>(grid_.total_origins()) * patch_voxels;
    double foreground = 0.0;
    for (std::size_t c = 1; c < k; ++c) {
      uniform[c] = weighted[c] / denom;
      foreground += uniform[c];
    }
    uniform[0] = 1.0 - foreground;
  }

  if (strategy.kind == SamplingKind::Uniform || strategy.oversample_prob == 0.0 || foreground_.empty())
    return uniform;

  // Foreground-forced draws: pick foreground voxel u uniformly, then an origin among the
  // n(u) covering it. Origin o is chosen with probability W(o) / F where
  // W(o) = sum over foreground u inside o of 1 / n(u).
  const std::int64_t sx = d.nx + 1, sy = d.ny + 1;
  std::vector<double> w_prefix(static_cast<std::size_t>(sx * sy * (d.nz + 1)), 0.0);
  auto wp = [&](std::int64_t x, std::int64_t y, std::int64_t z) -> double& {
    return w_prefix[static_cast<std::size_t>(x + sx * (y + sy * z))];
  };
  for (std::int64_t z = 1; z <= d.nz; ++z)
    for (std::int64_t y = 1; y <= d.ny; ++y)
      for (std::int64_t x = 1; x <= d.nx; ++x) {
        double w = 0.0;
        if (volume_->at(x - 1, y - 1, z - 1) != 0)
          w = 1.0 / (cover[0][static_cast<std::size_t>(x - 1)] * cover[1][static_cast<std::size_t>(y - 1)] *
                     cover[2][static_cast<std::size_t>(z - 1)]);
        wp(x, y, z) = w + wp(x - 1, y, z) + wp(x, y - 1, z) + wp(x, y, z - 1) - wp(x - 1, y - 1, z) -
                      wp(x - 1, y, z - 1) - wp(x, y - 1, z - 1) + wp(x - 1, y - 1, z - 1);
      }

  std::vector<double> forced(k, 0.0);
  std::array<std::int64_t, 3> o{};
  for (o[2] = 0; o[2] < grid_.origins(2); ++o[2])
    for (o[1] = 0; o[1] < grid_.origins(1); ++o[1])
      for (o[0] = 0; o[0] < grid_.origins(0); ++o[0]) {
        std::array<std::int64_t, 3> lo{}, hi{};
        bool empty = false;
        for (int a = 0; a < 3; ++a) {
          const auto ua = static_cast<std::size_t>(a);
          lo[ua] = std::max<std::int64_t>(0, o[ua] - grid_.pad_before(a));
          hi[ua] = std::min(d[a], o[ua] - grid_.pad_before(a) + grid_.patch()[a]);
          if (hi[ua] <= lo[ua]) empty = true;
        }
        if (empty) continue;
        const double w = wp(hi[0], hi[1], hi[2]) - wp(lo[0], hi[1], hi[2]) - wp(hi[0], lo[1], hi[2]) -
                         wp(hi[0], hi[1], lo[2]) + wp(lo[0], lo[1], hi[2]) + wp(lo[0], hi[1], lo[2]) +
                         wp(hi[0], lo[1], lo[2]) - wp(lo[0], lo[1], lo[2]);
        if (w <= 0.0) continue;
        const auto cnt = counts(o);
        for (std::size_t c = 1; c < k; ++c) forced[c] += w * static_cast<double>(cnt[c]);
      }
  const double fg_total = static_cast<double>(foreground_.size());
  double foreground = 0.0;
  for (std::size_t c = 1; c < k; ++c) {
    forced[c] /= fg_total * patch_voxels;
    foreground += forced[c];
  }
  forced[0] = 1.0 - foreground;

  const double p = strategy.oversample_prob;
  std::vector<double> mixed(k);
  for (std::size_t c = 0; c < k; ++c) mixed[c] = (1.0 - p) * uniform[c] + p * forced[c];
  return mixed;
}

SampledPatch sample_patch(const LabelVolume& volume, const PatchSpec& spec, const SamplingStrategy& strategy,
                          DrawStream& rng, int num_classes) {
  PatchSampler sampler(volume, spec, num_classes);
  SampledPatch out;
  out.draw = sampler.draw(strategy, rng);
  out.patch = sampler.extract(out.draw.origin);
  return out;
}

namespace {

std::vector<std::string> merged_class_names(std::span<const LabelVolume> volumes, int k) {
  std::vector<std::string> names;
  for (const LabelVolume& v : volumes)
    if (v.class_names().size() > names.size()) names = v.class_names();
  for (int c = static_cast<int>(names.size()); c < k; ++c)
    names.push_back(c == 0 ? "background" : "class_" + std::to_string(c));
  names.resize(static_cast<std::size_t>(k));
  return names;
}

}  // namespace

RatioHistogram simulate_epoch(std::span<const LabelVolume> volumes, const PatchSpec& spec,
                              const SamplingStrategy& strategy, std::int64_t patches_per_epoch,
                              const EpochOptions& options) {
  if (volumes.empty()) throw Error("simulate_epoch: empty volume set");
  if (patches_per_epoch < 1) throw Error("simulate_epoch: patches_per_epoch must be >= 1");
  if (!(strategy.oversample_prob >= 0.0 && strategy.oversample_prob <= 1.0))
    throw Error("simulate_epoch: oversampling probability must be in [0,1]");
  const int k = std::max(options.num_classes, common_num_classes(volumes));
  const auto uk = static_cast<std::size_t>(k);

  std::vector<PatchSampler> samplers;
  samplers.reserve(volumes.size());
  for (const LabelVolume& v : volumes) samplers.emplace_back(v, spec, k);

  RatioHistogram hist;
  hist.class_names = merged_class_names(volumes, k);
  hist.class_ratios.assign(uk, 0.0);

  if (options.exact) {
    hist.exact = true;
    for (const PatchSampler& s : samplers) {
      const auto r = s.expected_ratios(strategy);
      for (std::size_t c = 0; c < uk; ++c) hist.class_ratios[c] += r[c];
      hist.patches_sampled += s.grid().total_origins();
      if (strategy.kind == SamplingKind::ForegroundOversample && strategy.oversample_prob > 0.0 &&
          s.foreground_voxels() == 0)
        ++hist.fallback_draws;
    }
    for (double& r : hist.class_ratios) r /= static_cast<double>(samplers.size());
    return hist;
  }

  // Integer class counts per volume keep the reduction independent of draw order.
  std::vector<std::vector<std::int64_t>> counts(samplers.size(), std::vector<std::int64_t>(uk, 0));
  std::vector<std::int64_t> draws(samplers.size(), 0);
  for (std::int64_t d = 0; d < patches_per_epoch; ++d) {
    DrawStream rng(options.seed, options.stream, static_cast<std::uint64_t>(d));
    const auto vi = static_cast<std::size_t>(rng.uniform_index(samplers.size()));
    const PatchDraw draw = samplers[vi].draw(strategy, rng);
    if (draw.fallback) ++hist.fallback_draws;
    const auto cnt = samplers[vi].counts(draw.origin);
    for (std::size_t c = 0; c < uk; ++c) counts[vi][c] += cnt[c];
    ++draws[vi];
    if (options.keep_per_patch) {
      const double pv = static_cast<double>(samplers[vi].grid().patch().voxels());
      std::vector<double> r(uk);
      for (std::size_t c = 0; c < uk; ++c) r[c] = static_cast<double>(cnt[c]) / pv;
      hist.per_patch_ratios.push_back(std::move(r));
    }
  }
  for (std::size_t vi = 0; vi < samplers.size(); ++vi) {
    if (draws[vi] == 0) continue;
    const double denom = static_cast<double>(samplers[vi].grid().patch().voxels()) *
                         static_cast<double>(patches_per_epoch);
    for (std::size_t c = 0; c < uk; ++c) hist.class_ratios[c] += static_cast<double>(counts[vi][c]) / denom;
  }
  hist.patches_sampled = patches_per_epoch;
  return hist;
}

}  // namespace imbal
