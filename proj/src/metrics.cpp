#include "imbal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>

#include "imbal/stats.hpp"

namespace imbal {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_same_grid(const LabelVolume& a, const LabelVolume& b) {
  if (a.dims() != b.dims())
    throw Error("prediction and reference dims differ (" + std::to_string(a.dims().nx) + "x" +
                std::to_string(a.dims().ny) + "x" + std::to_string(a.dims().nz) + " vs " +
                std::to_string(b.dims().nx) + "x" + std::to_string(b.dims().ny) + "x" + std::to_string(b.dims().nz) +
                ")");
  if (a.spacing() != b.spacing()) throw Error("prediction and reference spacing differ");
}

double squared_mm(const VoxelCoord& a, const VoxelCoord& b, const Spacing& s) {
  const double dx = static_cast<double>(a[0] - b[0]) * s.sx;
  const double dy = static_cast<double>(a[1] - b[1]) * s.sy;
  const double dz = static_cast<double>(a[2] - b[2]) * s.sz;
  return dx * dx + dy * dy + dz * dz;
}

/// Static 3-d tree over voxel coordinates, stored implicitly: the median of a range is its
/// node and the halves are its subtrees.
class VoxelTree {
 public:
  VoxelTree(std::span<const VoxelCoord> points, const Spacing& spacing)
      : points_(points.begin(), points.end()), axis_(points.size(), 0), spacing_(spacing) {
    build(0, points_.size(), 0);
  }

  double nearest_squared(const VoxelCoord& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(q, 0, points_.size(), best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi, int depth) {
    if (hi - lo <= 1) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    // Split on the axis with the widest physical extent.
    std::array<std::int32_t, 3> mn{INT32_MAX, INT32_MAX, INT32_MAX}, mx{INT32_MIN, INT32_MIN, INT32_MIN};
    for (std::size_t i = lo; i < hi; ++i)
      for (std::size_t a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], points_[i][a]);
        mx[a] = std::max(mx[a], points_[i][a]);
      }
    int axis = 0;
    double widest = -1.0;
    for (int a = 0; a < 3; ++a) {
      const double w = (mx[static_cast<std::size_t>(a)] - mn[static_cast<std::size_t>(a)]) * spacing_[a];
      if (w > widest) {
        widest = w;
        axis = a;
      }
    }
    const auto ua = static_cast<std::size_t>(axis);
    std::nth_element(points_.begin() + static_cast<std::ptrdiff_t>(lo), points_.begin() + static_cast<std::ptrdiff_t>(mid),
                     points_.begin() + static_cast<std::ptrdiff_t>(hi),
                     [ua](const VoxelCoord& a, const VoxelCoord& b) { return a[ua] < b[ua]; });
    axis_[mid] = axis;
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(const VoxelCoord& q, std::size_t lo, std::size_t hi, double& best) const {
    if (hi <= lo) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const VoxelCoord& p = points_[mid];
    best = std::min(best, squared_mm(q, p, spacing_));
    if (hi - lo == 1) return;
    const int axis = axis_[mid];
    const auto ua = static_cast<std::size_t>(axis);
    const double gap = static_cast<double>(q[ua] - p[ua]) * spacing_[axis];
    const bool left_first = q[ua] < p[ua];
    if (left_first) {
      search(q, lo, mid, best);
      if (gap * gap <= best) search(q, mid + 1, hi, best);
    } else {
      search(q, mid + 1, hi, best);
      if (gap * gap <= best) search(q, lo, mid, best);
    }
  }

  std::vector<VoxelCoord> points_;
  std::vector<int> axis_;
  Spacing spacing_;
};

}  // namespace

MetricValue dsc(const LabelVolume& pred, const LabelVolume& gt, Label c) {
  require_same_grid(pred, gt);
  std::int64_t a = 0, b = 0, both = 0;
  const auto p = pred.data();
  const auto g = gt.data();
  for (std::size_t v = 0; v < p.size(); ++v) {
    const bool in_p = p[v] == c, in_g = g[v] == c;
    a += in_p;
    b += in_g;
    both += in_p && in_g;
  }
  MetricValue out;
  out.empty_pred = a == 0;
  out.empty_gt = b == 0;
  if (a == 0 && b == 0) out.value = 1.0;
  else out.value = 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  return out;
}

std::vector<VoxelCoord> surface_voxels(const LabelVolume& volume, Label c) {
  const Dims& d = volume.dims();
  std::vector<VoxelCoord> out;
  for (std::int64_t z = 0; z < d.nz; ++z)
    for (std::int64_t y = 0; y < d.ny; ++y)
      for (std::int64_t x = 0; x < d.nx; ++x) {
        if (volume.at(x, y, z) != c) continue;
        const bool border = x == 0 || y == 0 || z == 0 || x == d.nx - 1 || y == d.ny - 1 || z == d.nz - 1 ||
                            volume.at(x - 1, y, z) != c || volume.at(x + 1, y, z) != c ||
                            volume.at(x, y - 1, z) != c || volume.at(x, y + 1, z) != c ||
                            volume.at(x, y, z - 1) != c || volume.at(x, y, z + 1) != c;
        if (border)
          out.push_back({static_cast<std::int32_t>(x), static_cast<std::int32_t>(y), static_cast<std::int32_t>(z)});
      }
  return out;
}

std::vector<double> directed_surface_distances(std::span<const VoxelCoord> from, std::span<const VoxelCoord> to,
                                               const Spacing& spacing) {
  if (to.empty()) throw Error("directed_surface_distances: target surface is empty");
  const VoxelTree tree(to, spacing);
  std::vector<double> out;
  out.reserve(from.size());
  for (const VoxelCoord& q : from) out.push_back(std::sqrt(tree.nearest_squared(q)));
  return out;
}

SurfaceMetrics surface_metrics(const LabelVolume& pred, const LabelVolume& gt, Label c, std::optional<double> tau_mm) {
  require_same_grid(pred, gt);
  if (tau_mm && !(*tau_mm >= 0.0)) throw Error("surface Dice tolerance must be >= 0");
  const auto sp = surface_voxels(pred, c);
  const auto sg = surface_voxels(gt, c);
  SurfaceMetrics out;
  MetricValue flags;
  flags.empty_pred = sp.empty();
  flags.empty_gt = sg.empty();
  out.hd95 = flags;
  if (tau_mm) out.surface_dice = flags;

  if (sp.empty() || sg.empty()) {
    out.hd95.value = kNaN;
    if (tau_mm) out.surface_dice->value = (sp.empty() && sg.empty()) ? 1.0 : 0.0;
    return out;
  }
  const auto d_pg = directed_surface_distances(sp, sg, pred.spacing());
  const auto d_gp = directed_surface_distances(sg, sp, pred.spacing());
  out.hd95.value = std::max(percentile(d_pg, 95.0), percentile(d_gp, 95.0));
  if (tau_mm) {
    const auto within = [&](const std::vector<double>& d) {
      return std::count_if(d.begin(), d.end(), [&](double x) { return x <= *tau_mm; });
    };
    out.surface_dice->value = static_cast<double>(within(d_pg) + within(d_gp)) /
                              static_cast<double>(d_pg.size() + d_gp.size());
  }
  return out;
}

MetricValue hd95(const LabelVolume& pred, const LabelVolume& gt, Label c) {
  return surface_metrics(pred, gt, c, std::nullopt).hd95;
}

MetricValue surface_dice(const LabelVolume& pred, const LabelVolume& gt, Label c, double tau_mm) {
  return *surface_metrics(pred, gt, c, tau_mm).surface_dice;
}

// ---------------------------------------------------------------- components

namespace {

/// Labels the 26-connected components of the voxels accepted by `select`, scanning in
/// linear order. Returns per-voxel component ids (-1 outside) and component sizes.
template <typename Select>
std::pair<std::vector<std::int32_t>, std::vector<std::int64_t>> label_components(const LabelVolume& volume,
                                                                                Select select) {
  const Dims& d = volume.dims();
  const auto data = volume.data();
  std::vector<std::int32_t> ids(data.size(), -1);
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> stack;
  for (std::int64_t start = 0; start < static_cast<std::int64_t>(data.size()); ++start) {
    if (ids[static_cast<std::size_t>(start)] >= 0 || !select(data[static_cast<std::size_t>(start)])) continue;
    const Label c = data[static_cast<std::size_t>(start)];
    const auto id = static_cast<std::int32_t>(sizes.size());
    std::int64_t size = 0;
    ids[static_cast<std::size_t>(start)] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      ++size;
      const std::int64_t x = v % d.nx, y = (v / d.nx) % d.ny, z = v / (d.nx * d.ny);
      for (std::int64_t dz = -1; dz <= 1; ++dz)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
          for (std::int64_t dx = -1; dx <= 1; ++dx) {
            const std::int64_t xx = x + dx, yy = y + dy, zz = z + dz;
            if (xx < 0 || yy < 0 || zz < 0 || xx >= d.nx || yy >= d.ny || zz >= d.nz) continue;
            const std::int64_t n = linear_index(d, xx, yy, zz);
            if (ids[static_cast<std::size_t>(n)] >= 0 || data[static_cast<std::size_t>(n)] != c) continue;
            ids[static_cast<std::size_t>(n)] = id;
            stack.push_back(n);
          }
    }
    sizes.push_back(size);
  }
  return {std::move(ids), std::move(sizes)};
}

}  // namespace

LabelVolume largest_component(const LabelVolume& volume, std::span<const Label> classes) {
  std::vector<bool> selected(static_cast<std::size_t>(volume.num_classes()) + 1, classes.empty());
  selected[0] = false;
  for (Label c : classes)
    if (c != 0 && c < selected.size()) selected[c] = true;
  auto select = [&](Label c) { return c < selected.size() && selected[c]; };
  const auto [ids, sizes] = label_components(volume, select);

  // First component of each class encountered in scan order wins ties.
  std::vector<std::int32_t> keep(selected.size(), -1);
  const auto data = volume.data();
  std::vector<std::int64_t> seen_class(sizes.size(), -1);
  for (std::size_t v = 0; v < data.size(); ++v) {
    const std::int32_t id = ids[v];
    if (id < 0 || seen_class[static_cast<std::size_t>(id)] >= 0) continue;
    seen_class[static_cast<std::size_t>(id)] = data[v];
    std::int32_t& k = keep[data[v]];
    if (k < 0 || sizes[static_cast<std::size_t>(id)] > sizes[static_cast<std::size_t>(k)]) k = id;
  }
  LabelVolume out = volume;
  auto out_data = out.data();
  for (std::size_t v = 0; v < data.size(); ++v)
    if (ids[v] >= 0 && ids[v] != keep[data[v]]) out_data[v] = 0;
  return out;
}

std::vector<std::int64_t> component_sizes(const LabelVolume& volume, Label c) {
  return label_components(volume, [c](Label l) { return l == c; }).second;
}

// ---------------------------------------------------------------- confidence drift

namespace {

struct SplitSamples {
  std::vector<float> values;
  std::vector<std::pair<double, std::int64_t>> case_sums;  // (sum, count) per case
};

std::vector<float> thin_sorted(std::vector<float> values, std::size_t cap) {
  std::sort(values.begin(), values.end());
  if (cap == 0 || values.size() <= cap) return values;
  std::vector<float> out;
  out.reserve(cap);
  if (cap == 1) {
    out.push_back(values[values.size() / 2]);
    return out;
  }
  for (std::size_t i = 0; i < cap; ++i) {
    const std::size_t idx = (i * (values.size() - 1)) / (cap - 1);
    out.push_back(values[idx]);
  }
  return out;
}

/// Sum of per-case sums in a canonical order, so the split's mean does not depend on the
/// order in which cases were listed.
std::pair<double, std::int64_t> canonical_total(std::vector<std::pair<double, std::int64_t>> sums) {
  std::sort(sums.begin(), sums.end());
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& [s, n] : sums) {
    total += s;
    count += n;
  }
  return {total, count};
}

void collect(std::span<const ConfidenceCase> split, int num_classes, const DriftOptions& options,
             std::vector<SplitSamples>& out) {
  out.assign(static_cast<std::size_t>(num_classes), {});
  for (const ConfidenceCase& cs : split) {
    if (cs.probs.dims() != cs.labels.dims()) throw Error("confidence drift: probability and label dims differ");
    const LabelVolume mask = options.mask == DriftMask::GroundTruth ? cs.labels : argmax(cs.probs);
    std::vector<std::pair<double, std::int64_t>> sums(static_cast<std::size_t>(num_classes), {0.0, 0});
    const auto m = mask.data();
    for (std::size_t v = 0; v < m.size(); ++v) {
      const Label c = m[v];
      if (c >= num_classes || c >= cs.probs.channels()) continue;
      const float p = cs.probs.at(c, static_cast<std::int64_t>(v));
      out[c].values.push_back(p);
      sums[c].first += p;
      ++sums[c].second;
    }
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (sums[c].second > 0) out[c].case_sums.push_back(sums[c]);
  }
}

}  // namespace

DriftReport confidence_drift(std::span<const ConfidenceCase> train, std::span<const ConfidenceCase> test,
                             const DriftOptions& options) {
  int num_classes = 1;
  for (auto split : {train, test})
    for (const ConfidenceCase& cs : split) {
      if (!cs.probs.is_normalized(1e-3)) throw Error("confidence drift: probability volume is not normalized");
      num_classes = std::max({num_classes, cs.probs.channels(), cs.labels.num_classes()});
    }
  std::vector<SplitSamples> tr, te;
  collect(train, num_classes, options, tr);
  collect(test, num_classes, options, te);

  DriftReport report;
  for (int c = options.include_background ? 0 : 1; c < num_classes; ++c) {
    ClassDrift cd;
    cd.class_id = c;
    const auto [sum_tr, n_tr] = canonical_total(tr[static_cast<std::size_t>(c)].case_sums);
    const auto [sum_te, n_te] = canonical_total(te[static_cast<std::size_t>(c)].case_sums);
    cd.n_train = n_tr;
    cd.n_test = n_te;
    cd.mean_train = n_tr > 0 ? sum_tr / static_cast<double>(n_tr) : kNaN;
    cd.mean_test = n_te > 0 ? sum_te / static_cast<double>(n_te) : kNaN;
    cd.drift = (n_tr > 0 && n_te > 0) ? cd.mean_train - cd.mean_test : kNaN;
    cd.train_sample = thin_sorted(std::move(tr[static_cast<std::size_t>(c)].values), options.max_export_samples);
    cd.test_sample = thin_sorted(std::move(te[static_cast<std::size_t>(c)].values), options.max_export_samples);
    report.classes.push_back(std::move(cd));
  }
  return report;
}

// ---------------------------------------------------------------- case evaluation

namespace {

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  std::vector<double> defined;
  for (double v : values) {
    if (v == v) defined.push_back(v);
    else ++s.excluded;
  }
  s.n = static_cast<int>(defined.size());
  s.mean = defined.empty() ? kNaN : mean(defined);
  s.std = defined.empty() ? kNaN : population_std(defined);
  return s;
}

}  // namespace

void aggregate(EvalReport& report) {
  std::set<int> class_ids;
  for (const CaseMetrics& cm : report.cases)
    for (const ClassMetrics& m : cm.classes) class_ids.insert(m.class_id);

  auto name_of = [&](int c) {
    return c >= 0 && static_cast<std::size_t>(c) < report.class_names.size() ? report.class_names[static_cast<std::size_t>(c)]
                                                                             : "class_" + std::to_string(c);
  };
  report.per_class.clear();
  std::vector<double> all_dsc, all_hd, all_sd;
  for (int c : class_ids) {
    std::vector<double> d, h, s;
    for (const CaseMetrics& cm : report.cases)
      for (const ClassMetrics& m : cm.classes)
        if (m.class_id == c) {
          d.push_back(m.dsc);
          h.push_back(m.hd95_mm);
          s.push_back(m.surface_dice);
        }
    all_dsc.insert(all_dsc.end(), d.begin(), d.end());
    all_hd.insert(all_hd.end(), h.begin(), h.end());
    all_sd.insert(all_sd.end(), s.begin(), s.end());
    report.per_class.push_back({c, name_of(c), summarize(d), summarize(h), summarize(s)});
  }
  report.average = {-1, "average", summarize(all_dsc), summarize(all_hd), summarize(all_sd)};
}

EvalReport evaluate_cases(std::span<const LabeledCase> predictions, std::span<const LabeledCase> references,
                          const EvalOptions& options) {
  std::map<std::string, const LabelVolume*> refs;
  for (const LabeledCase& r : references) {
    if (!refs.emplace(r.id, &r.volume).second) throw Error("duplicate reference case '" + r.id + "'");
  }
  std::set<std::string> pred_ids;
  for (const LabeledCase& p : predictions) {
    if (!pred_ids.insert(p.id).second) throw Error("duplicate prediction case '" + p.id + "'");
    if (!refs.contains(p.id)) throw Error("prediction case '" + p.id + "' has no reference");
  }
  for (const auto& [id, vol] : refs)
    if (!pred_ids.contains(id)) throw Error("reference case '" + id + "' has no prediction");

  std::vector<int> classes = options.classes;
  EvalReport report;
  if (classes.empty()) {
    int k = 1;
    for (const LabeledCase& p : predictions) k = std::max(k, p.volume.num_classes());
    for (const LabeledCase& r : references) k = std::max(k, r.volume.num_classes());
    for (int c = 1; c < k; ++c) classes.push_back(c);
  }
  for (const LabeledCase& r : references)
    if (r.volume.class_names().size() > report.class_names.size()) report.class_names = r.volume.class_names();

  std::vector<const LabeledCase*> ordered;
  for (const LabeledCase& p : predictions) ordered.push_back(&p);
  std::sort(ordered.begin(), ordered.end(), [](const LabeledCase* a, const LabeledCase* b) { return a->id < b->id; });

  for (const LabeledCase* p : ordered) {
    const LabelVolume& gt = *refs.at(p->id);
    const LabelVolume pred = options.postprocess ? largest_component(p->volume) : p->volume;
    CaseMetrics cm;
    cm.case_id = p->id;
    for (int c : classes) {
      const auto label = static_cast<Label>(c);
      const MetricValue d = dsc(pred, gt, label);
      const auto tau = options.tau_mm.find(c);
      const SurfaceMetrics sm =
          surface_metrics(pred, gt, label, tau == options.tau_mm.end() ? std::nullopt : std::optional(tau->second));
      ClassMetrics m;
      m.class_id = c;
      m.dsc = d.value;
      m.hd95_mm = sm.hd95.value;
      m.surface_dice = sm.surface_dice ? sm.surface_dice->value : kNaN;
      m.empty_pred = d.empty_pred;
      m.empty_gt = d.empty_gt;
      cm.classes.push_back(m);
    }
    report.cases.push_back(std::move(cm));
  }
  aggregate(report);
  return report;
}

std::vector<ComparisonRow> compare_reports(const EvalReport& a, const EvalReport& b, double alpha) {
  std::map<std::pair<std::string, int>, const ClassMetrics*> in_b;
  for (const CaseMetrics& cm : b.cases)
    for (const ClassMetrics& m : cm.classes) in_b[{cm.case_id, m.class_id}] = &m;

  std::set<int> class_ids;
  for (const CaseMetrics& cm : a.cases)
    for (const ClassMetrics& m : cm.classes) class_ids.insert(m.class_id);

  struct Metric {
    const char* name;
    double ClassMetrics::*field;
  };
  const Metric metrics[] = {{"dsc", &ClassMetrics::dsc},
                            {"hd95_mm", &ClassMetrics::hd95_mm},
                            {"surface_dice", &ClassMetrics::surface_dice}};

  std::vector<ComparisonRow> rows;
  for (const Metric& metric : metrics) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_class;
    std::vector<double> pooled_a, pooled_b;
    for (const CaseMetrics& cm : a.cases)
      for (const ClassMetrics& m : cm.classes) {
        const auto it = in_b.find({cm.case_id, m.class_id});
        if (it == in_b.end()) continue;
        const double va = m.*(metric.field);
        const double vb = it->second->*(metric.field);
        if (!(va == va) || !(vb == vb)) continue;
        per_class[m.class_id].first.push_back(va);
        per_class[m.class_id].second.push_back(vb);
        pooled_a.push_back(va);
        pooled_b.push_back(vb);
      }
    auto make_row = [&](int c, const std::vector<double>& xa, const std::vector<double>& xb) {
      ComparisonRow row;
      row.class_id = c;
      row.metric = metric.name;
      row.pairs = static_cast<int>(xa.size());
      row.mean_a = xa.empty() ? kNaN : mean(xa);
      row.mean_b = xb.empty() ? kNaN : mean(xb);
      if (!xa.empty()) row.test = wilcoxon_signed_rank(xa, xb, alpha);
      else row.test.all_zero = true;
      return row;
    };
    for (int c : class_ids) {
      const auto& pr = per_class[c];
      rows.push_back(make_row(c, pr.first, pr.second));
    }
    rows.push_back(make_row(-1, pooled_a, pooled_b));
  }
  return rows;
}

}  // namespace imbal
