#include "imbal/report_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace imbal {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string csv_number(double v) { return std::isnan(v) ? "" : format_double(v); }

std::string comment_header(const json& config) {
  return "# tool: imbal " + std::string(kToolVersion) + "\n# config: " + config.dump() + "\n";
}

json summary_json(const MetricSummary& s) {
  return {{"mean", number_or_null(s.mean)}, {"std", number_or_null(s.std)}, {"n", s.n}, {"excluded", s.excluded}};
}

json aggregate_json(const ClassAggregate& a) {
  return {{"class", a.class_id},
          {"name", a.name},
          {"dsc", summary_json(a.dsc)},
          {"hd95_mm", summary_json(a.hd95_mm)},
          {"surface_dice", summary_json(a.surface_dice)}};
}

json flags_json(const ClassMetrics& m) {
  json flags = json::array();
  if (m.empty_pred) flags.push_back("empty-prediction");
  if (m.empty_gt) flags.push_back("empty-ground-truth");
  if (std::isnan(m.hd95_mm)) flags.push_back("hd95-undefined");
  if (std::isnan(m.surface_dice)) flags.push_back("no-surface-dice");
  return flags;
}

std::string flags_text(const ClassMetrics& m) {
  std::string out;
  for (const auto& f : flags_json(m)) {
    if (!out.empty()) out += ";";
    out += f.get<std::string>();
  }
  return out;
}

std::string class_name(const EvalReport& r, int c) {
  if (c >= 0 && static_cast<std::size_t>(c) < r.class_names.size()) return r.class_names[static_cast<std::size_t>(c)];
  return "class_" + std::to_string(c);
}

}  // namespace

json provenance(const json& config) {
  return {{"tool", "imbal"}, {"version", kToolVersion}, {"config", config}};
}

json to_json(const RatioHistogram& h) {
  json classes = json::array();
  for (std::size_t c = 0; c < h.class_ratios.size(); ++c)
    classes.push_back({{"class", c},
                       {"name", c < h.class_names.size() ? h.class_names[c] : "class_" + std::to_string(c)},
                       {"mean_ratio", h.class_ratios[c]}});
  json j = {{"classes", classes},
            {"patches_sampled", h.patches_sampled},
            {"fallback_draws", h.fallback_draws},
            {"exact", h.exact}};
  if (!h.per_patch_ratios.empty()) j["per_patch_ratios"] = h.per_patch_ratios;
  return j;
}

json to_json(const ImbalanceReport& r) {
  return {{"patch", r.spec.full_volume ? json("full") : json({r.spec.px, r.spec.py, r.spec.pz})},
          {"sigma", r.sigma},
          {"voxels", r.voxels},
          {"strategy", r.strategy.to_string()},
          {"seed", r.seed},
          {"patches_per_epoch", r.patches_per_epoch},
          {"histogram", to_json(r.histogram)}};
}

json to_json(const EvalReport& r) {
  json rows = json::array();
  for (const CaseMetrics& cm : r.cases)
    for (const ClassMetrics& m : cm.classes)
      rows.push_back({{"case", cm.case_id},
                      {"class", m.class_id},
                      {"name", class_name(r, m.class_id)},
                      {"dsc", number_or_null(m.dsc)},
                      {"hd95_mm", number_or_null(m.hd95_mm)},
                      {"surface_dice", number_or_null(m.surface_dice)},
                      {"flags", flags_json(m)}});
  json per_class = json::array();
  for (const ClassAggregate& a : r.per_class) per_class.push_back(aggregate_json(a));
  return {{"rows", rows}, {"per_class", per_class}, {"average", aggregate_json(r.average)}, {"class_names", r.class_names}};
}

EvalReport eval_report_from_json(const json& j) {
  const json& body = j.contains("report") ? j.at("report") : j;
  EvalReport r;
  if (body.contains("class_names")) r.class_names = body.at("class_names").get<std::vector<std::string>>();
  auto value = [](const json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  for (const json& row : body.at("rows")) {
    const std::string id = row.at("case").get<std::string>();
    if (r.cases.empty() || r.cases.back().case_id != id) r.cases.push_back({id, {}});
    ClassMetrics m;
    m.class_id = row.at("class").get<int>();
    m.dsc = value(row.at("dsc"));
    m.hd95_mm = value(row.at("hd95_mm"));
    m.surface_dice = value(row.at("surface_dice"));
    for (const json& f : row.at("flags")) {
      if (f == "empty-prediction") m.empty_pred = true;
      if (f == "empty-ground-truth") m.empty_gt = true;
    }
    r.cases.back().classes.push_back(m);
  }
  aggregate(r);
  return r;
}

json to_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const ComparisonRow& row : rows)
    out.push_back({{"class", row.class_id},
                   {"metric", row.metric},
                   {"pairs", row.pairs},
                   {"mean_a", number_or_null(row.mean_a)},
                   {"mean_b", number_or_null(row.mean_b)},
                   {"w_plus", row.test.w_plus},
                   {"w_minus", row.test.w_minus},
                   {"n_nonzero", row.test.n},
                   {"p_value", row.test.p_value},
                   {"exact", row.test.exact},
                   {"significant", row.test.significant},
                   {"all_differences_zero", row.test.all_zero}});
  return out;
}

json to_json(const DriftReport& r, bool with_samples) {
  json classes = json::array();
  for (const ClassDrift& c : r.classes) {
    json e = {{"class", c.class_id},
              {"n_train", c.n_train},
              {"n_test", c.n_test},
              {"mean_train", number_or_null(c.mean_train)},
              {"mean_test", number_or_null(c.mean_test)},
              {"drift", number_or_null(c.drift)}};
    if (with_samples) {
      e["train_sample"] = c.train_sample;
      e["test_sample"] = c.test_sample;
    }
    classes.push_back(e);
  }
  return {{"classes", classes}};
}

json to_json(const LossResult& r, DiceVariant variant) {
  json terms = json::array();
  for (Eigen::Index c = 0; c < r.per_class_terms.size(); ++c) terms.push_back(number_or_null(r.per_class_terms(c)));
  return {{"variant", to_string(variant)},
          {"value", r.value},
          {"n_present", r.n_present},
          {"no_present_classes", r.no_present_classes},
          {"per_class_terms", terms}};
}

std::string histogram_csv(const RatioHistogram& h, double sigma, const json& config) {
  std::ostringstream out;
  out << comment_header(config) << "# sigma: " << format_double(sigma) << "\n";
  out << "class,name,mean_ratio\n";
  for (std::size_t c = 0; c < h.class_ratios.size(); ++c)
    out << c << ',' << (c < h.class_names.size() ? h.class_names[c] : "class_" + std::to_string(c)) << ','
        << format_double(h.class_ratios[c]) << '\n';
  return out.str();
}

std::string eval_report_csv(const EvalReport& r, const json& config) {
  std::ostringstream out;
  out << comment_header(config) << "case,class,name,dsc,hd95_mm,surface_dice,flags\n";
  for (const CaseMetrics& cm : r.cases)
    for (const ClassMetrics& m : cm.classes)
      out << cm.case_id << ',' << m.class_id << ',' << class_name(r, m.class_id) << ',' << csv_number(m.dsc) << ','
          << csv_number(m.hd95_mm) << ',' << csv_number(m.surface_dice) << ',' << flags_text(m) << '\n';
  auto summary = [&](const ClassAggregate& a) {
    out << "mean," << a.class_id << ',' << a.name << ',' << csv_number(a.dsc.mean) << ',' << csv_number(a.hd95_mm.mean)
        << ',' << csv_number(a.surface_dice.mean) << ",hd95_excluded=" << a.hd95_mm.excluded << '\n';
    out << "std," << a.class_id << ',' << a.name << ',' << csv_number(a.dsc.std) << ',' << csv_number(a.hd95_mm.std)
        << ',' << csv_number(a.surface_dice.std) << ",\n";
  };
  for (const ClassAggregate& a : r.per_class) summary(a);
  summary(r.average);
  return out.str();
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows, const json& config) {
  std::ostringstream out;
  out << comment_header(config) << "class,metric,pairs,mean_a,mean_b,w_plus,w_minus,p_value,exact,significant\n";
  for (const ComparisonRow& row : rows)
    out << row.class_id << ',' << row.metric << ',' << row.pairs << ',' << csv_number(row.mean_a) << ','
        << csv_number(row.mean_b) << ',' << format_double(row.test.w_plus) << ',' << format_double(row.test.w_minus)
        << ',' << format_double(row.test.p_value) << ',' << (row.test.exact ? 1 : 0) << ','
        << (row.test.significant ? 1 : 0) << '\n';
  return out.str();
}

std::string drift_samples_csv(const DriftReport& r, const json& config) {
  std::ostringstream out;
  out << comment_header(config) << "split,class,confidence\n";
  for (const ClassDrift& c : r.classes) {
    for (float v : c.train_sample) out << "train," << c.class_id << ',' << format_double(v) << '\n';
    for (float v : c.test_sample) out << "test," << c.class_id << ',' << format_double(v) << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace imbal
