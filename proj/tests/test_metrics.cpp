#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <iterator>
#include <limits>
#include <set>

#include "imbal/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace imbal;
using imbal::testing::Gen;
namespace oracle = imbal::oracle;

namespace {

LabelVolume single_voxel(Dims d, Spacing s, std::array<std::int64_t, 3> at) {
  LabelVolume v(d, s);
  v.at(at[0], at[1], at[2]) = 1;
  return v;
}

/// Random blobs: a few boxes of random classes, so surfaces have interiors.
LabelVolume random_blobs(Gen& g, Dims d, Spacing s, int classes) {
  LabelVolume v(d, s);
  const int boxes = static_cast<int>(g.integer(0, 4));
  for (int b = 0; b < boxes; ++b) {
    const auto c = static_cast<Label>(g.integer(1, classes - 1));
    std::array<std::int64_t, 3> lo{}, hi{};
    for (int a = 0; a < 3; ++a) {
      lo[static_cast<std::size_t>(a)] = g.integer(0, d[a] - 1);
      hi[static_cast<std::size_t>(a)] = g.integer(lo[static_cast<std::size_t>(a)], d[a] - 1);
    }
    for (std::int64_t z = lo[2]; z <= hi[2]; ++z)
      for (std::int64_t y = lo[1]; y <= hi[1]; ++y)
        for (std::int64_t x = lo[0]; x <= hi[0]; ++x) v.at(x, y, z) = c;
  }
  for (Label& l : v.data())
    if (g.coin(0.05)) l = static_cast<Label>(g.integer(0, classes - 1));
  return v;
}

}  // namespace

TEST_CASE("DSC") {
  Gen g(1);
  const LabelVolume a = imbal::testing::random_labels(g, {6, 6, 6}, {}, 2, 0.5);
  CHECK(dsc(a, a, 1).value == 1.0);
  const LabelVolume l = single_voxel({4, 4, 4}, {}, {0, 0, 0}), r = single_voxel({4, 4, 4}, {}, {3, 3, 3});
  CHECK(dsc(l, r, 1).value == 0.0);
  const LabelVolume empty({4, 4, 4}, {});
  const MetricValue both_empty = dsc(empty, empty, 1);
  CHECK(both_empty.value == 1.0);
  CHECK(both_empty.empty_pred);
  CHECK(both_empty.empty_gt);
  const MetricValue one_empty = dsc(l, empty, 1);
  CHECK(one_empty.value == 0.0);
  CHECK(one_empty.empty_gt);
  CHECK_FALSE(one_empty.empty_pred);
  CHECK_THROWS_AS(dsc(l, LabelVolume({4, 4, 3}, {}), 1), Error);
}

TEST_CASE("hd95 and surface Dice on single voxels") {
  const Dims d{5, 5, 5};
  const LabelVolume a = single_voxel(d, {}, {1, 2, 2}), b = single_voxel(d, {}, {2, 2, 2});
  CHECK(hd95(a, b, 1).value == 1.0);
  CHECK(hd95(a, a, 1).value == 0.0);
  const LabelVolume far = single_voxel(d, {}, {3, 2, 2});
  CHECK(surface_dice(a, far, 1, 1.0).value == 0.0);
  CHECK(surface_dice(a, a, 1, 0.0).value == 1.0);
  CHECK(surface_dice(a, far, 1, 1e9).value == 1.0);
  const LabelVolume aniso_a = single_voxel(d, {0.5, 0.5, 3.0}, {2, 2, 1}),
                    aniso_b = single_voxel(d, {0.5, 0.5, 3.0}, {2, 2, 2});
  CHECK(hd95(aniso_a, aniso_b, 1).value == 3.0);

  const LabelVolume empty(d, {});
  const MetricValue h = hd95(a, empty, 1);
  CHECK_FALSE(h.defined());
  CHECK(h.empty_gt);
  CHECK(surface_dice(empty, empty, 1, 1.0).value == 1.0);
  CHECK(surface_dice(a, empty, 1, 1.0).value == 0.0);
}

TEST_CASE("surface voxels and metrics agree with brute-force oracles") {
  Gen g(2);
  for (int trial = 0; trial < 300; ++trial) {
    const Dims d = imbal::testing::random_dims(g, 1, 6);
    const Spacing s = imbal::testing::random_spacing(g);
    const LabelVolume a = trial % 2 ? random_blobs(g, d, s, 3) : imbal::testing::random_labels(g, d, s, 3, g.real(0, 1));
    const LabelVolume b = trial % 3 ? random_blobs(g, d, s, 3) : imbal::testing::random_labels(g, d, s, 3, g.real(0, 1));
    for (Label c : {Label{1}, Label{2}}) {
      CHECK(surface_voxels(a, c) == oracle::surface(a, c));
      CHECK(dsc(a, b, c).value == oracle::dsc(a, b, c));
      CHECK(dsc(a, b, c).value == dsc(b, a, c).value);
      const double expected = oracle::hd95(a, b, c);
      const MetricValue got = hd95(a, b, c);
      if (std::isnan(expected)) {
        CHECK_FALSE(got.defined());
      } else {
        CHECK(got.value == expected);
        CHECK(hd95(b, a, c).value == got.value);
      }
      double last = -1.0;
      for (double tau : {0.0, 0.5, 1.0, 1.5, 2.5, 4.0, 1e9}) {
        const double sd = surface_dice(a, b, c, tau).value;
        CHECK(sd >= last);
        CHECK(sd == surface_dice(b, a, c, tau).value);
        last = sd;
      }
    }
  }
}

TEST_CASE("directed distances on larger point sets equal brute force") {
  Gen g(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<VoxelCoord> from, to;
    for (int i = 0; i < 300; ++i) from.push_back({static_cast<int>(g.integer(0, 40)), static_cast<int>(g.integer(0, 40)),
                                                  static_cast<int>(g.integer(0, 20))});
    for (int i = 0; i < static_cast<int>(g.integer(1, 400)); ++i)
      to.push_back({static_cast<int>(g.integer(0, 40)), static_cast<int>(g.integer(0, 40)),
                    static_cast<int>(g.integer(0, 20))});
    const Spacing s = imbal::testing::random_spacing(g);
    CHECK(directed_surface_distances(from, to, s) == oracle::directed(from, to, s));
  }
}

TEST_CASE("largest component") {
  SUBCASE("a single blob is unchanged") {
    LabelVolume v({6, 6, 6}, {});
    for (std::int64_t x = 1; x < 4; ++x) v.at(x, 2, 2) = 1;
    v.at(4, 3, 3) = 1;  // diagonal neighbour under 26-connectivity
    CHECK(largest_component(v) == v);
  }
  SUBCASE("a 10-voxel and a 3-voxel blob") {
    LabelVolume v({12, 4, 4}, {});
    for (std::int64_t x = 0; x < 5; ++x)
      for (std::int64_t y = 0; y < 2; ++y) v.at(x, y, 0) = 1;
    for (std::int64_t x = 8; x < 11; ++x) v.at(x, 3, 3) = 1;
    const LabelVolume kept = largest_component(v);
    CHECK(kept.class_counts(2)[1] == 10);
    CHECK(kept.at(9, 3, 3) == 0);
  }
  SUBCASE("ties keep the component met first in linear order") {
    LabelVolume v({7, 1, 1}, {});
    v.at(5, 0, 0) = 1;
    v.at(1, 0, 0) = 1;
    const LabelVolume kept = largest_component(v);
    CHECK(kept.at(1, 0, 0) == 1);
    CHECK(kept.at(5, 0, 0) == 0);
  }
  SUBCASE("random volumes match a flood-fill oracle") {
    Gen g(4);
    for (int trial = 0; trial < 100; ++trial) {
      const LabelVolume v = imbal::testing::random_labels(g, imbal::testing::random_dims(g, 1, 8), {}, 4, g.real(0.05, 0.6));
      const LabelVolume kept = largest_component(v);
      for (Label c = 1; c < 4; ++c) {
        const auto sizes = oracle::component_sizes(v, c);
        CHECK(component_sizes(v, c) == sizes);
        const std::int64_t largest = sizes.empty() ? 0 : *std::max_element(sizes.begin(), sizes.end());
        const auto counts_after = kept.class_counts(4);
        CHECK(counts_after[c] == largest);
        CHECK(counts_after[c] <= v.class_counts(4)[c]);
      }
      CHECK(largest_component(kept) == kept);
      const std::vector<Label> only_two{2};
      const LabelVolume partial = largest_component(v, only_two);
      CHECK(partial.class_counts(4)[1] == v.class_counts(4)[1]);
    }
  }
}

TEST_CASE("Wilcoxon signed-rank test") {
  const std::vector<double> same{0.7, 0.8, 0.9};
  const WilcoxonResult zero = wilcoxon_signed_rank(same, same);
  CHECK(zero.p_value == 1.0);
  CHECK(zero.all_zero);

  const std::vector<double> a{1.5, 2.5, 3.5, 4.5, 5.5}, b{1, 2, 3, 4, 5};
  const WilcoxonResult pos = wilcoxon_signed_rank(a, b);
  CHECK(pos.p_value == 0.0625);
  CHECK(pos.w_plus == 15.0);
  CHECK(pos.exact);
  CHECK_FALSE(pos.significant);

  Gen g(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<std::size_t>(g.integer(1, 12));
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(g.integer(0, 6));
      y[i] = static_cast<double>(g.integer(0, 6));
    }
    const WilcoxonResult r = wilcoxon_signed_rank(x, y);
    CHECK(r.p_value == oracle::wilcoxon_p(x, y));
    CHECK(r.w_plus + r.w_minus == doctest::Approx(r.n * (r.n + 1) / 2.0));
    CHECK(wilcoxon_signed_rank(y, x).p_value == r.p_value);
  }

  // Above the exact limit: normal approximation, no ties here.
  std::vector<double> x(40), y(40, 0.0);
  for (std::size_t i = 0; i < 40; ++i) x[i] = (i % 3 == 0 ? -1.0 : 1.0) * static_cast<double>(i + 1);
  const WilcoxonResult big = wilcoxon_signed_rank(x, y);
  CHECK_FALSE(big.exact);
  double w = 0;
  for (std::size_t i = 0; i < 40; ++i)
    if (x[i] > 0) w += static_cast<double>(i + 1);
  const double z = (w - 40.0 * 41.0 / 4.0) / std::sqrt(40.0 * 41.0 * 81.0 / 24.0);
  CHECK(big.z == doctest::Approx(z).epsilon(1e-12));
  CHECK(big.p_value == doctest::Approx(std::erfc(std::abs(z) / std::sqrt(2.0))).epsilon(1e-12));
  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{1.0}, std::vector<double>{}), Error);
}

TEST_CASE("confidence drift") {
  Gen g(6);
  auto random_case = [&](Dims d, int k) {
    ConfidenceCase c{ProbVolume(d, {}, k), imbal::testing::random_labels(g, d, {}, k, 0.5)};
    for (std::int64_t v = 0; v < d.voxels(); ++v) {
      std::vector<double> w(static_cast<std::size_t>(k));
      double s = 0;
      for (double& x : w) s += (x = g.real(0.01, 1));
      for (int ch = 0; ch < k; ++ch) c.probs.at(ch, v) = static_cast<float>(w[static_cast<std::size_t>(ch)] / s);
    }
    return c;
  };
  SUBCASE("identical splits drift by zero") {
    std::vector<ConfidenceCase> split{random_case({5, 5, 4}, 3), random_case({4, 6, 3}, 3)};
    const DriftReport r = confidence_drift(split, split);
    for (const ClassDrift& c : r.classes) CHECK(c.drift == 0.0);
  }
  SUBCASE("constant confidences") {
    LabelVolume labels({4, 4, 4}, {});
    for (std::int64_t x = 0; x < 4; ++x) labels.at(x, 1, 1) = 1;
    auto constant = [&](float p1) {
      ProbVolume p({4, 4, 4}, {}, 2);
      for (std::int64_t v = 0; v < 64; ++v) {
        p.at(1, v) = p1;
        p.at(0, v) = 1.0f - p1;
      }
      return ConfidenceCase{p, labels};
    };
    const std::vector<ConfidenceCase> train{constant(0.9f)}, test{constant(0.7f)};
    const DriftReport r = confidence_drift(train, test);
    REQUIRE(r.classes.size() == 1);
    CHECK(r.classes[0].class_id == 1);
    CHECK(r.classes[0].drift == doctest::Approx(0.2).epsilon(1e-6));
  }
  SUBCASE("means match a masked-mean oracle and ignore case order") {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<ConfidenceCase> train, test;
      for (int i = 0; i < 3; ++i) train.push_back(random_case(imbal::testing::random_dims(g, 2, 6), 4));
      for (int i = 0; i < 2; ++i) test.push_back(random_case(imbal::testing::random_dims(g, 2, 6), 4));
      for (const DriftMask mask : {DriftMask::GroundTruth, DriftMask::Prediction}) {
        DriftOptions o;
        o.mask = mask;
        const DriftReport r = confidence_drift(train, test, o);
        auto masked_mean = [&](const std::vector<ConfidenceCase>& split, int c) {
          double s = 0;
          std::int64_t n = 0;
          for (const ConfidenceCase& cs : split) {
            const LabelVolume pred = argmax(cs.probs);
            for (std::int64_t v = 0; v < cs.probs.voxels(); ++v) {
              const Label sel = mask == DriftMask::GroundTruth ? cs.labels.data()[static_cast<std::size_t>(v)]
                                                               : pred.data()[static_cast<std::size_t>(v)];
              if (sel != c) continue;
              s += cs.probs.at(c, v);
              ++n;
            }
          }
          return n ? s / static_cast<double>(n) : std::nan("");
        };
        for (const ClassDrift& c : r.classes) {
          CHECK(c.class_id >= 1);
          const double mt = masked_mean(train, c.class_id), ms = masked_mean(test, c.class_id);
          if (std::isnan(mt) || std::isnan(ms)) {
            CHECK(std::isnan(c.drift));
            continue;
          }
          CHECK(c.mean_train == doctest::Approx(mt).epsilon(1e-12));
          CHECK(c.mean_test == doctest::Approx(ms).epsilon(1e-12));
        }
        std::vector<ConfidenceCase> train_rev(train.rbegin(), train.rend()), test_rev(test.rbegin(), test.rend());
        const DriftReport rr = confidence_drift(train_rev, test_rev, o);
        REQUIRE(rr.classes.size() == r.classes.size());
        for (std::size_t i = 0; i < r.classes.size(); ++i) {
          CHECK(std::memcmp(&rr.classes[i].drift, &r.classes[i].drift, sizeof(double)) == 0);
          CHECK(rr.classes[i].train_sample == r.classes[i].train_sample);
        }
      }
    }
  }
  SUBCASE("a class missing from a split has undefined drift") {
    LabelVolume with({2, 2, 2}, {}), without({2, 2, 2}, {});
    with.at(0, 0, 0) = 2;
    ProbVolume p({2, 2, 2}, {}, 3);
    for (std::int64_t v = 0; v < 8; ++v) p.at(0, v) = 1.0f;
    const std::vector<ConfidenceCase> train{{p, with}}, test{{p, without}};
    const DriftReport r = confidence_drift(train, test);
    bool seen = false;
    for (const ClassDrift& c : r.classes)
      if (c.class_id == 2) {
        seen = true;
        CHECK(std::isnan(c.drift));
      }
    CHECK(seen);
  }
  SUBCASE("export sampling is capped") {
    std::vector<ConfidenceCase> split{random_case({10, 10, 10}, 2)};
    DriftOptions o;
    o.max_export_samples = 50;
    const DriftReport r = confidence_drift(split, split, o);
    CHECK(r.classes[0].train_sample.size() == 50);
    CHECK(std::is_sorted(r.classes[0].train_sample.begin(), r.classes[0].train_sample.end()));
  }
}

TEST_CASE("case evaluation and aggregation") {
  Gen g(7);
  std::vector<LabeledCase> gt;
  for (int i = 0; i < 3; ++i) gt.push_back({"case" + std::to_string(i), random_blobs(g, {8, 8, 6}, {1, 1, 2}, 3)});
  gt[0].volume.at(0, 0, 0) = 1;
  gt[0].volume.at(7, 7, 5) = 2;

  SUBCASE("perfect predictions") {
    EvalOptions o;
    o.tau_mm = {{1, 1.0}, {2, 2.0}};
    const EvalReport r = evaluate_cases(gt, gt, o);
    REQUIRE(r.cases.size() == 3);
    for (const CaseMetrics& cm : r.cases)
      for (const ClassMetrics& m : cm.classes) {
        if (m.empty_gt) continue;
        CHECK(m.dsc == 1.0);
        CHECK(m.hd95_mm == 0.0);
        CHECK(m.surface_dice == 1.0);
      }
    const auto rows = compare_reports(r, r);
    for (const ComparisonRow& row : rows) CHECK(row.test.p_value == 1.0);
  }
  SUBCASE("identifier mismatch") {
    std::vector<LabeledCase> pred = gt;
    pred[1].id = "other";
    CHECK_THROWS_AS(evaluate_cases(pred, gt), Error);
  }
  SUBCASE("hand-built aggregation") {
    EvalReport r;
    r.cases = {{"a", {{1, 0.8, 2.0, 0.9, false, false}, {2, 0.6, std::nan(""), 0.5, false, true}}},
               {"b", {{1, 0.4, 4.0, 0.7, false, false}, {2, 1.0, 1.0, 1.0, false, false}}}};
    aggregate(r);
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.per_class[0].dsc.mean == doctest::Approx(0.6));
    CHECK(r.per_class[0].dsc.std == doctest::Approx(0.2));
    CHECK(r.per_class[0].hd95_mm.mean == doctest::Approx(3.0));
    CHECK(r.per_class[1].hd95_mm.mean == doctest::Approx(1.0));
    CHECK(r.per_class[1].hd95_mm.n == 1);
    CHECK(r.per_class[1].hd95_mm.excluded == 1);
    CHECK(r.average.class_id == -1);
    CHECK(r.average.dsc.mean == doctest::Approx(0.7));
    CHECK(r.average.dsc.std == doctest::Approx(std::sqrt((0.01 + 0.01 + 0.09 + 0.09) / 4)));
    CHECK(r.average.hd95_mm.mean == doctest::Approx(7.0 / 3.0));
    CHECK(r.average.hd95_mm.excluded == 1);
  }
  SUBCASE("postprocessing removes stray voxels before scoring") {
    std::vector<LabeledCase> pred = gt;
    LabelVolume& v = pred[0].volume;
    v = LabelVolume(v.dims(), v.spacing());
    for (std::int64_t x = 0; x < 4; ++x)
      for (std::int64_t y = 0; y < 4; ++y) v.at(x, y, 0) = 1;
    v.at(7, 7, 5) = 1;
    std::vector<LabeledCase> ref = pred;
    ref[0].volume.at(7, 7, 5) = 0;
    EvalOptions o;
    o.postprocess = true;
    const EvalReport r = evaluate_cases(std::span(pred).first(1), std::span(ref).first(1), o);
    CHECK(r.cases[0].classes[0].dsc == 1.0);
    o.postprocess = false;
    CHECK(evaluate_cases(std::span(pred).first(1), std::span(ref).first(1), o).cases[0].classes[0].dsc < 1.0);
  }
}
