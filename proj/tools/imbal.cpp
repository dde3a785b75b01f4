// imbal: class-imbalance analysis for patch-based volumetric segmentation.
//
// Exit codes: 0 success, 1 degenerate results under --strict, 2 usage or I/O error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "imbal/loss.hpp"
#include "imbal/metrics.hpp"
#include "imbal/planner.hpp"
#include "imbal/report_io.hpp"
#include "imbal/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace imbal;

namespace {

constexpr int kExitDegenerate = 1;
constexpr int kExitUsage = 2;

// ---------------------------------------------------------------- helpers

std::array<std::int64_t, 3> parse_triple(const std::string& text, const std::string& what) {
  const PatchSpec p = [&] {
    try {
      return PatchSpec::parse(text);
    } catch (const Error&) {
      throw Error(what + " '" + text + "': expected AxBxC with positive integers");
    }
  }();
  if (p.full_volume) throw Error(what + " '" + text + "': expected AxBxC");
  return {p.px, p.py, p.pz};
}

Spacing parse_spacing(const std::string& text) {
  std::array<double, 3> v{};
  std::stringstream ss(text);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, 'x')) {
    if (i == 3) throw Error("spacing '" + text + "': expected SXxSYxSZ");
    try {
      std::size_t used = 0;
      v[static_cast<std::size_t>(i)] = std::stod(part, &used);
      if (used != part.size()) throw Error("");
    } catch (const std::exception&) {
      throw Error("spacing '" + text + "': expected SXxSYxSZ");
    }
    ++i;
  }
  if (i != 3 || v[0] <= 0 || v[1] <= 0 || v[2] <= 0) throw Error("spacing '" + text + "': expected positive SXxSYxSZ");
  return {v[0], v[1], v[2]};
}

/// "1=2.0,2=1.5" -> {1: 2.0, 2: 1.5}
std::map<int, double> parse_tau(const std::string& text) {
  std::map<int, double> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("tau entry '" + item + "': expected CLASS=MM");
    try {
      const int c = std::stoi(item.substr(0, eq));
      const double mm = std::stod(item.substr(eq + 1));
      if (c < 0 || mm < 0) throw Error("");
      out[c] = mm;
    } catch (const std::exception&) {
      throw Error("tau entry '" + item + "': expected CLASS=MM with MM >= 0");
    }
  }
  return out;
}

bool is_volume_file(const fs::path& p) {
  if (!fs::is_regular_file(p) || p.filename().string().starts_with(".")) return false;
  const auto ext = p.extension().string();
  if (ext == ".mhd" || ext == ".mha") return true;
  if (ext == ".json") {
    fs::path raw = p;
    raw.replace_extension(".raw");
    return fs::is_regular_file(raw);
  }
  return false;
}

/// Volume files of a directory keyed by file stem, sorted by name.
std::vector<std::pair<std::string, fs::path>> list_volumes(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("dataset directory '" + dir + "' does not exist or is not a directory");
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (is_volume_file(entry.path())) out.emplace_back(entry.path().stem().string(), entry.path());
  std::sort(out.begin(), out.end());
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i].first == out[i - 1].first) throw IoError("'" + dir + "': two volume files share the case id '" + out[i].first + "'");
  if (out.empty()) throw IoError("'" + dir + "' contains no volume files (.json+.raw, .mhd, .mha)");
  return out;
}

std::vector<LabeledCase> load_label_dir(const std::string& dir) {
  std::vector<LabeledCase> out;
  for (const auto& [id, path] : list_volumes(dir)) out.push_back({id, load_label_volume(path)});
  return out;
}

std::vector<LabelVolume> volumes_of(std::vector<LabeledCase> cases) {
  std::vector<LabelVolume> out;
  out.reserve(cases.size());
  for (LabeledCase& c : cases) out.push_back(std::move(c.volume));
  return out;
}

/// "none" keeps native spacing, "auto" derives the target from the set, otherwise SXxSYxSZ.
std::optional<Spacing> apply_spacing(std::vector<LabelVolume>& volumes, const std::string& mode) {
  if (mode == "none") return std::nullopt;
  const Spacing target = mode == "auto" ? compute_target_spacing(volumes) : parse_spacing(mode);
  for (LabelVolume& v : volumes) v = resample(v, target);
  return target;
}

json spacing_json(const std::optional<Spacing>& s) {
  if (!s) return nullptr;
  return json::array({s->sx, s->sy, s->sz});
}

fs::path prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory '" + out + "'");
  return fs::path(out);
}

/// Expands `--config FILE` into flags inserted right after the subcommand path, so flags
/// given on the command line come later and take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].starts_with("--config=")) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config_path) return args;
  std::ifstream in(*config_path);
  if (!in) throw IoError("cannot open config file '" + *config_path + "'");
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw IoError("config file '" + *config_path + "': " + e.what());
  }
  if (!cfg.is_object()) throw IoError("config file '" + *config_path + "' must hold a JSON object");

  std::vector<std::string> injected;
  auto scalar = [](const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      for (const json& item : value) {
        injected.push_back(flag);
        injected.push_back(scalar(item));
      }
    } else if (!value.is_null()) {
      injected.push_back(flag);
      injected.push_back(scalar(value));
    }
  }
  std::size_t pos = 1;  // skip program name
  while (pos < args.size() && !args[pos].starts_with("-")) ++pos;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(pos), injected.begin(), injected.end());
  return args;
}

// ---------------------------------------------------------------- commands

struct Common {
  std::string out = ".";
  std::uint64_t seed = 0;
  bool strict = false;
};

struct HistogramArgs {
  std::string dataset;
  std::string patch = "full";
  std::string strategy = "uniform";
  std::int64_t draws = kDefaultPatchesPerEpoch;
  bool exact = false;
  std::string spacing = "none";
};

int cmd_histogram(const HistogramArgs& a, const Common& common) {
  const PatchSpec spec = PatchSpec::parse(a.patch);
  const SamplingStrategy strategy = SamplingStrategy::parse(a.strategy);
  auto cases = load_label_dir(a.dataset);
  std::vector<std::string> ids;
  for (const LabeledCase& c : cases) ids.push_back(c.id);
  std::vector<LabelVolume> volumes = volumes_of(std::move(cases));
  const auto target = apply_spacing(volumes, a.spacing);

  EpochOptions opts;
  opts.seed = common.seed;
  opts.exact = a.exact;
  const ImbalanceReport report = evaluate_patch_size(volumes, spec, strategy, a.draws, opts);

  const json config = {{"command", "histogram"}, {"dataset", a.dataset},         {"cases", ids},
                       {"patch", spec.to_string()}, {"strategy", strategy.to_string()}, {"draws", a.draws},
                       {"seed", common.seed},     {"exact", a.exact},           {"spacing", a.spacing},
                       {"target_spacing", spacing_json(target)}, {"strict", common.strict}};
  const fs::path out = prepare_out(common.out);
  json doc = provenance(config);
  doc["sigma"] = report.sigma;
  doc["sigma_max"] = max_imbalance_sigma(static_cast<int>(report.histogram.class_ratios.size()));
  doc["histogram"] = to_json(report.histogram);
  write_json(out / "histogram.json", doc);
  write_text(out / "histogram.csv", histogram_csv(report.histogram, report.sigma, config));
  std::cout << "sigma " << format_double(report.sigma) << "\n";
  return common.strict && report.histogram.fallback_draws > 0 ? kExitDegenerate : 0;
}

struct OptimizeArgs {
  std::string dataset;
  std::string step = "16x16x8";
  std::string min = "32x32x16";
  std::string max = "192x192x64";
  std::int64_t max_voxels = 0;
  bool include_full = false;
  std::vector<std::string> candidates;
  std::string strategy = "uniform";
  std::int64_t draws = kDefaultPatchesPerEpoch;
  bool exact = false;
  double tie_delta = kDefaultTieDelta;
  std::string spacing = "none";
};

int cmd_optimize(const OptimizeArgs& a, const Common& common) {
  PatchConstraints c;
  c.axis_step = parse_triple(a.step, "--step");
  c.axis_min = parse_triple(a.min, "--min");
  c.axis_max = parse_triple(a.max, "--max");
  if (a.max_voxels > 0) c.max_voxels = a.max_voxels;
  c.include_full_volume = a.include_full;
  for (const std::string& s : a.candidates) c.extra.push_back(PatchSpec::parse(s));
  const SamplingStrategy strategy = SamplingStrategy::parse(a.strategy);

  auto cases = load_label_dir(a.dataset);
  std::vector<std::string> ids;
  for (const LabeledCase& lc : cases) ids.push_back(lc.id);
  std::vector<LabelVolume> volumes = volumes_of(std::move(cases));
  const auto target = apply_spacing(volumes, a.spacing);

  const OptimizationResult result = optimize_patch_size(volumes, c, strategy, a.draws, common.seed, a.tie_delta, a.exact);

  std::vector<std::string> extra;
  for (const PatchSpec& p : c.extra) extra.push_back(p.to_string());
  const json config = {{"command", "optimize"},
                       {"dataset", a.dataset},
                       {"cases", ids},
                       {"step", a.step},
                       {"min", a.min},
                       {"max", a.max},
                       {"max_voxels", c.max_voxels ? json(*c.max_voxels) : json(nullptr)},
                       {"include_full", a.include_full},
                       {"candidates", extra},
                       {"strategy", strategy.to_string()},
                       {"draws", a.draws},
                       {"seed", common.seed},
                       {"exact", a.exact},
                       {"tie_delta", a.tie_delta},
                       {"spacing", a.spacing},
                       {"target_spacing", spacing_json(target)},
                       {"strict", common.strict}};
  json ranking = json::array();
  bool fallback = false;
  for (const ImbalanceReport& r : result.ranking) {
    ranking.push_back(to_json(r));
    fallback = fallback || r.histogram.fallback_draws > 0;
  }
  json doc = provenance(config);
  doc["best"] = to_json(result.best_report);
  doc["ranking"] = ranking;
  write_json(prepare_out(common.out) / "ranking.json", doc);
  std::cout << "best " << result.best.to_string() << " sigma " << format_double(result.best_report.sigma) << "\n";
  return common.strict && fallback ? kExitDegenerate : 0;
}

struct EvaluateArgs {
  std::string pred;
  std::string gt;
  std::string tau;
  bool postprocess = false;
};

int cmd_evaluate(const EvaluateArgs& a, const Common& common) {
  EvalOptions opts;
  opts.tau_mm = parse_tau(a.tau);
  opts.postprocess = a.postprocess;
  const auto preds = load_label_dir(a.pred);
  const auto gts = load_label_dir(a.gt);
  const EvalReport report = evaluate_cases(preds, gts, opts);

  json tau = json::object();
  for (const auto& [c, mm] : opts.tau_mm) tau[std::to_string(c)] = mm;
  const json config = {{"command", "evaluate"}, {"pred", a.pred},
                       {"gt", a.gt},           {"tau", tau},
                       {"postprocess", a.postprocess}, {"strict", common.strict}};
  const fs::path out = prepare_out(common.out);
  json doc = provenance(config);
  doc["report"] = to_json(report);
  write_json(out / "eval_report.json", doc);
  write_text(out / "eval_report.csv", eval_report_csv(report, config));

  bool degenerate = false;
  for (const CaseMetrics& cm : report.cases)
    for (const ClassMetrics& m : cm.classes) degenerate = degenerate || m.empty_pred || m.empty_gt;
  std::cout << "dsc " << format_double(report.average.dsc.mean) << " hd95_mm " << format_double(report.average.hd95_mm.mean)
            << "\n";
  return common.strict && degenerate ? kExitDegenerate : 0;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "': " + e.what());
  }
}

struct CompareArgs {
  std::string a;
  std::string b;
  double alpha = 0.05;
};

int cmd_compare(const CompareArgs& a, const Common& common) {
  EvalReport ra, rb;
  try {
    ra = eval_report_from_json(read_json_file(a.a));
    rb = eval_report_from_json(read_json_file(a.b));
  } catch (const json::exception& e) {
    throw IoError(std::string("evaluation report has an unexpected layout: ") + e.what());
  }
  const auto rows = compare_reports(ra, rb, a.alpha);
  const json config = {{"command", "compare"}, {"a", a.a}, {"b", a.b}, {"alpha", a.alpha}, {"strict", common.strict}};
  const fs::path out = prepare_out(common.out);
  json doc = provenance(config);
  doc["comparisons"] = to_json(rows);
  write_json(out / "comparison.json", doc);
  write_text(out / "comparison.csv", comparison_csv(rows, config));
  bool degenerate = false;
  for (const ComparisonRow& r : rows) degenerate = degenerate || r.test.all_zero;
  for (const ComparisonRow& r : rows)
    if (r.class_id < 0) {
      if (r.pairs == 0) std::cout << r.metric << " no pairs\n";
      else std::cout << r.metric << " p " << format_double(r.test.p_value) << (r.test.significant ? " *" : "") << "\n";
    }
  return common.strict && degenerate ? kExitDegenerate : 0;
}

struct DriftArgs {
  std::string train_pred, train_gt, test_pred, test_gt;
  std::string mask = "gt";
  std::size_t samples = 2000;
  bool include_background = false;
};

std::vector<ConfidenceCase> load_confidence_split(const std::string& prob_dir, const std::string& gt_dir) {
  const auto probs = list_volumes(prob_dir);
  const auto gts = list_volumes(gt_dir);
  std::map<std::string, fs::path> gt_by_id(gts.begin(), gts.end());
  std::vector<ConfidenceCase> out;
  for (const auto& [id, path] : probs) {
    const auto it = gt_by_id.find(id);
    if (it == gt_by_id.end()) throw IoError("probability case '" + id + "' has no label volume in '" + gt_dir + "'");
    out.push_back({load_prob_volume(path), load_label_volume(it->second)});
  }
  if (out.size() != gts.size()) throw IoError("'" + gt_dir + "' has label volumes without probability volumes");
  return out;
}

int cmd_drift(const DriftArgs& a, const Common& common) {
  DriftOptions opts;
  if (a.mask == "gt") opts.mask = DriftMask::GroundTruth;
  else if (a.mask == "pred") opts.mask = DriftMask::Prediction;
  else throw Error("--mask must be gt or pred");
  opts.max_export_samples = a.samples;
  opts.include_background = a.include_background;
  const auto train = load_confidence_split(a.train_pred, a.train_gt);
  const auto test = load_confidence_split(a.test_pred, a.test_gt);
  const DriftReport report = confidence_drift(train, test, opts);

  const json config = {{"command", "drift"},         {"train_pred", a.train_pred}, {"train_gt", a.train_gt},
                       {"test_pred", a.test_pred},   {"test_gt", a.test_gt},       {"mask", a.mask},
                       {"samples", a.samples},       {"include_background", a.include_background},
                       {"strict", common.strict}};
  const fs::path out = prepare_out(common.out);
  json doc = provenance(config);
  doc["drift"] = to_json(report);
  write_json(out / "drift_summary.json", doc);
  write_text(out / "drift_samples.csv", drift_samples_csv(report, config));
  bool degenerate = false;
  for (const ClassDrift& c : report.classes) {
    degenerate = degenerate || !(c.drift == c.drift);
    std::cout << "class " << c.class_id << " drift " << format_double(c.drift) << "\n";
  }
  return common.strict && degenerate ? kExitDegenerate : 0;
}

struct LossArgs {
  std::vector<std::string> pred;
  std::vector<std::string> gt;
  std::string dice = "ca";
  std::string loss = "dice";
  double eps = 1e-5;
  std::string ce_norm = "batch-voxel";
  std::string dice_output = "loss";
  double w_ce = 1.0;
  double w_dice = 1.0;
  bool write_out = false;
};

int cmd_loss(const LossArgs& a, const Common& common, bool out_given) {
  if (a.pred.size() != a.gt.size() || a.pred.empty())
    throw Error("loss eval: give matching --pred/--gt pairs (got " + std::to_string(a.pred.size()) + " and " +
                std::to_string(a.gt.size()) + ")");
  LossConfig cfg;
  cfg.epsilon = a.eps;
  if (a.ce_norm == "batch") cfg.ce_normalization = CeNormalization::Batch;
  else if (a.ce_norm == "batch-voxel") cfg.ce_normalization = CeNormalization::BatchAndVoxel;
  else throw Error("--ce-norm must be batch or batch-voxel");
  if (a.dice_output == "score") cfg.dice_output = DiceOutput::Score;
  else if (a.dice_output == "loss") cfg.dice_output = DiceOutput::OneMinusScore;
  else throw Error("--dice-output must be score or loss");
  const DiceVariant variant = parse_dice_variant(a.dice);

  PatchBatch batch;
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    const ProbVolume p = load_prob_volume(a.pred[i]);
    const VolumeHeader gh = read_volume_header(a.gt[i]);
    if (gh.channels == 1 && gh.type != ElementType::F32)
      batch.add(p, load_label_volume(a.gt[i]));
    else
      batch.add(p, load_prob_volume(a.gt[i]));
  }

  LossResult result;
  if (a.loss == "dice") result = dice_loss(batch, variant, cfg);
  else if (a.loss == "ce") result = ce_loss(batch, cfg);
  else if (a.loss == "combined") result = combined_loss(batch, cfg, variant, {a.w_ce, a.w_dice});
  else throw Error("--loss must be dice, ce or combined");

  const json config = {{"command", "loss eval"}, {"pred", a.pred},          {"gt", a.gt},
                       {"dice", a.dice},         {"loss", a.loss},          {"eps", a.eps},
                       {"ce_norm", a.ce_norm},   {"dice_output", a.dice_output}, {"w_ce", a.w_ce},
                       {"w_dice", a.w_dice},     {"strict", common.strict}};
  json doc = to_json(result, variant);
  doc["loss"] = a.loss;
  std::cout << doc.dump() << "\n";
  if (out_given) {
    json full = provenance(config);
    full["result"] = doc;
    write_json(prepare_out(common.out) / "loss.json", full);
  }
  return common.strict && result.no_present_classes ? kExitDegenerate : 0;
}

struct PhantomArgs {
  std::string spec;
  std::string dims = "64x64x32";
  std::string spacing = "1x1x1";
  int organs = 7;
  int count = 1;
  std::string format = "json";
};

OrganSpec organ_from_json(const json& j) {
  OrganSpec o;
  o.class_id = j.at("class").get<Label>();
  const std::string shape = j.value("shape", "box");
  if (shape == "box") o.shape = OrganShape::Box;
  else if (shape == "ellipsoid") o.shape = OrganShape::Ellipsoid;
  else throw Error("organ shape '" + shape + "': expected box or ellipsoid");
  const auto c = j.at("center").get<std::vector<double>>();
  const auto r = j.at("radii").get<std::vector<double>>();
  if (c.size() != 3 || r.size() != 3) throw Error("organ center and radii need 3 entries");
  o.center = {c[0], c[1], c[2]};
  o.radii = {r[0], r[1], r[2]};
  return o;
}

int cmd_phantom(const PhantomArgs& a, const Common& common) {
  if (a.format != "json" && a.format != "mhd") throw Error("--format must be json or mhd");
  if (a.count < 1) throw Error("--count must be >= 1");
  const fs::path out = prepare_out(common.out);
  json manifest = json::array();
  for (int i = 0; i < a.count; ++i) {
    const std::uint64_t seed = common.seed + static_cast<std::uint64_t>(i);
    PhantomSpec spec;
    if (!a.spec.empty()) {
      const json j = read_json_file(a.spec);
      try {
        const auto d = j.at("dims").get<std::vector<std::int64_t>>();
        const auto s = j.at("spacing").get<std::vector<double>>();
        if (d.size() != 3 || s.size() != 3) throw Error("phantom spec: dims and spacing need 3 entries");
        spec.dims = {d[0], d[1], d[2]};
        spec.spacing = {s[0], s[1], s[2]};
        for (const json& o : j.at("organs")) spec.organs.push_back(organ_from_json(o));
        spec.center_jitter = j.value("center_jitter", 0.0);
        if (j.contains("class_names")) spec.class_names = j.at("class_names").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        throw IoError("phantom spec '" + a.spec + "': " + e.what());
      }
    } else {
      const auto d = parse_triple(a.dims, "--dims");
      spec = random_phantom_spec({d[0], d[1], d[2]}, parse_spacing(a.spacing), a.organs, seed);
    }
    const Phantom ph = generate_phantom(spec, seed);
    char name[32];
    std::snprintf(name, sizeof name, "case_%03d", i);
    save_volume(out / (std::string(name) + (a.format == "json" ? ".json" : ".mhd")), ph.volume);
    manifest.push_back({{"case", name}, {"seed", seed}, {"class_counts", ph.class_counts}, {"organ_voxels", ph.organ_voxels}});
  }
  const json config = {{"command", "phantom"}, {"spec", a.spec},     {"dims", a.dims},     {"spacing", a.spacing},
                       {"organs", a.organs},   {"count", a.count},   {"format", a.format}, {"seed", common.seed}};
  json doc = provenance(config);
  doc["cases"] = manifest;
  write_json(out / "phantoms.manifest", doc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  try {
    args = expand_config(std::move(args));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  CLI::App app{"Class-imbalance analysis for patch-based volumetric segmentation"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("imbal ") + kToolVersion);

  Common common;
  auto add_common = [&](CLI::App* sub, bool with_seed) {
    sub->add_option("--out", common.out, "Output directory")->capture_default_str();
    if (with_seed) sub->add_option("--seed", common.seed, "RNG seed")->capture_default_str();
    sub->add_flag("--strict", common.strict, "Exit with code 1 when degenerate results are flagged");
  };

  HistogramArgs ha;
  auto* histogram = app.add_subcommand("histogram", "Mean in-patch class ratios over one epoch and their sigma");
  histogram->add_option("--dataset", ha.dataset, "Directory of label volumes")->required();
  histogram->add_option("--patch", ha.patch, "Patch size PXxPYxPZ or 'full'")->capture_default_str();
  histogram->add_option("--strategy", ha.strategy, "uniform or fg:PROB")->capture_default_str();
  histogram->add_option("--draws", ha.draws, "Patches per epoch")->capture_default_str()->check(CLI::PositiveNumber);
  histogram->add_flag("--exact", ha.exact, "Exact expectation over all valid origins");
  histogram->add_option("--spacing", ha.spacing, "Resample first: none, auto or SXxSYxSZ")->capture_default_str();
  add_common(histogram, true);

  OptimizeArgs oa;
  auto* optimize = app.add_subcommand("optimize", "Search the patch size minimizing sigma");
  optimize->add_option("--dataset", oa.dataset, "Directory of label volumes")->required();
  optimize->add_option("--step", oa.step, "Axis steps GXxGYxGZ")->capture_default_str();
  optimize->add_option("--min", oa.min, "Axis minimums")->capture_default_str();
  optimize->add_option("--max", oa.max, "Axis maximums")->capture_default_str();
  optimize->add_option("--max-voxels", oa.max_voxels, "Voxel budget per patch (0 = none)")->capture_default_str();
  optimize->add_flag("--include-full", oa.include_full, "Also rank whole-volume sampling");
  optimize->add_option("--candidate", oa.candidates, "Extra candidate PXxPYxPZ or 'full' (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  optimize->add_option("--strategy", oa.strategy, "uniform or fg:PROB")->capture_default_str();
  optimize->add_option("--draws", oa.draws, "Patches per epoch")->capture_default_str()->check(CLI::PositiveNumber);
  optimize->add_flag("--exact", oa.exact, "Exact expectation over all valid origins");
  optimize->add_option("--tie-delta", oa.tie_delta, "Sigma tie tolerance")->capture_default_str();
  optimize->add_option("--spacing", oa.spacing, "Resample first: none, auto or SXxSYxSZ")->capture_default_str();
  add_common(optimize, true);

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "DSC, 95% Hausdorff distance and surface Dice per case and class");
  evaluate->add_option("--pred", ea.pred, "Directory of predicted label volumes")->required();
  evaluate->add_option("--gt", ea.gt, "Directory of reference label volumes")->required();
  evaluate->add_option("--tau", ea.tau, "Surface Dice tolerances CLASS=MM,...");
  evaluate->add_flag("--postprocess", ea.postprocess, "Keep the largest component per class first");
  add_common(evaluate, false);

  CompareArgs ca;
  auto* compare = app.add_subcommand("compare", "Wilcoxon signed-rank tests between two evaluation reports");
  compare->add_option("--a", ca.a, "First eval_report.json")->required();
  compare->add_option("--b", ca.b, "Second eval_report.json")->required();
  compare->add_option("--alpha", ca.alpha, "Significance level")->capture_default_str();
  add_common(compare, false);

  DriftArgs da;
  auto* drift = app.add_subcommand("drift", "Train/test softmax confidence drift per class");
  drift->add_option("--train-pred", da.train_pred, "Training probability volumes")->required();
  drift->add_option("--train-gt", da.train_gt, "Training label volumes")->required();
  drift->add_option("--test-pred", da.test_pred, "Test probability volumes")->required();
  drift->add_option("--test-gt", da.test_gt, "Test label volumes")->required();
  drift->add_option("--mask", da.mask, "Voxel selection: gt or pred")->capture_default_str();
  drift->add_option("--samples", da.samples, "Exported samples per class and split (0 = all)")->capture_default_str();
  drift->add_flag("--include-background", da.include_background, "Also report class 0");
  add_common(drift, false);

  LossArgs la;
  auto* loss = app.add_subcommand("loss", "Loss kernels");
  loss->require_subcommand(1);
  auto* loss_eval = loss->add_subcommand("eval", "Evaluate a loss on prediction/target volume pairs");
  loss_eval->add_option("--pred", la.pred, "Probability volume (repeat per batch item)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  loss_eval->add_option("--gt", la.gt, "Label or one-hot volume (repeat per batch item)")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  loss_eval->add_option("--dice", la.dice, "Dice variant: nnu, ca or plain")->capture_default_str();
  loss_eval->add_option("--loss", la.loss, "dice, ce or combined")->capture_default_str();
  loss_eval->add_option("--eps", la.eps, "Dice smoothing epsilon")->capture_default_str();
  loss_eval->add_option("--ce-norm", la.ce_norm, "batch or batch-voxel")->capture_default_str();
  loss_eval->add_option("--dice-output", la.dice_output, "score or loss (1 - score)")->capture_default_str();
  loss_eval->add_option("--w-ce", la.w_ce, "CE weight for --loss combined")->capture_default_str();
  loss_eval->add_option("--w-dice", la.w_dice, "Dice weight for --loss combined")->capture_default_str();
  auto* loss_out = loss_eval->add_option("--out", common.out, "Also write loss.json here");
  loss_eval->add_flag("--strict", common.strict, "Exit with code 1 when no class is present");

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Write synthetic multi-organ label volumes");
  phantom->add_option("--spec", pa.spec, "Phantom spec JSON (otherwise a random HAN-like layout)");
  phantom->add_option("--dims", pa.dims, "Dims of random phantoms")->capture_default_str();
  phantom->add_option("--spacing", pa.spacing, "Spacing of random phantoms")->capture_default_str();
  phantom->add_option("--organs", pa.organs, "Organs in random phantoms")->capture_default_str();
  phantom->add_option("--count", pa.count, "Number of phantoms (seed, seed+1, ...)")->capture_default_str();
  phantom->add_option("--format", pa.format, "json or mhd")->capture_default_str();
  add_common(phantom, true);

  std::vector<char*> cargs;
  for (std::string& a : args) cargs.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*histogram) return cmd_histogram(ha, common);
    if (*optimize) return cmd_optimize(oa, common);
    if (*evaluate) return cmd_evaluate(ea, common);
    if (*compare) return cmd_compare(ca, common);
    if (*drift) return cmd_drift(da, common);
    if (*loss_eval) return cmd_loss(la, common, loss_out->count() > 0);
    if (*phantom) return cmd_phantom(pa, common);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
