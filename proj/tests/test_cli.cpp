#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "imbal/planner.hpp"
#include "imbal/volume_io.hpp"
#include "support.hpp"

using namespace imbal;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = std::string(IMBAL_CLI) + " " + args;
  cmd += stdout_file.empty() ? " > /dev/null" : " > '" + stdout_file.string() + "'";
  cmd += " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

/// Uniform-origin expectation by scanning every patch (patch fits inside the volume).
std::vector<double> scan_expectation(const LabelVolume& v, Dims p, int k) {
  std::vector<double> acc(static_cast<std::size_t>(k), 0.0);
  std::int64_t n = 0;
  for (std::int64_t oz = 0; oz + p.nz <= v.dims().nz; ++oz)
    for (std::int64_t oy = 0; oy + p.ny <= v.dims().ny; ++oy)
      for (std::int64_t ox = 0; ox + p.nx <= v.dims().nx; ++ox) {
        ++n;
        for (std::int64_t z = 0; z < p.nz; ++z)
          for (std::int64_t y = 0; y < p.ny; ++y)
            for (std::int64_t x = 0; x < p.nx; ++x) acc[v.at(ox + x, oy + y, oz + z)] += 1.0;
      }
  for (double& a : acc) a /= static_cast<double>(n * p.voxels());
  return acc;
}

double sigma_of(const std::vector<double>& r) {
  double ss = 0;
  for (double x : r) ss += (x - 1.0 / static_cast<double>(r.size())) * (x - 1.0 / static_cast<double>(r.size()));
  return std::sqrt(ss / static_cast<double>(r.size()));
}

void write_dataset(const fs::path& dir, int count, std::uint64_t seed) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    const Phantom ph = generate_phantom(random_phantom_spec({16, 16, 8}, {1, 1, 2}, 3, seed + i), seed + i);
    save_volume(dir / ("case_" + std::to_string(i) + ".json"), ph.volume);
  }
}

}  // namespace

TEST_CASE("histogram command") {
  const fs::path dir = imbal::testing::scratch_dir("cli_histogram");
  SUBCASE("all-background phantom reaches the maximal sigma") {
    fs::create_directories(dir / "bg");
    save_volume(dir / "bg" / "only.json", LabelVolume({6, 6, 4}, {1, 1, 1}, std::vector<std::string>{"background", "organ"}));
    REQUIRE(run("histogram --dataset " + (dir / "bg").string() + " --patch full --out " + (dir / "o1").string()) == 0);
    const json h = read_json(dir / "o1" / "histogram.json");
    CHECK(h["histogram"]["classes"][0]["mean_ratio"] == 1.0);
    CHECK(h["histogram"]["classes"][1]["mean_ratio"] == 0.0);
    CHECK(h["sigma"].get<double>() == doctest::Approx(max_imbalance_sigma(2)).epsilon(1e-15));
    CHECK(h["tool"] == "imbal");
    CHECK(h["config"]["patch"] == "full");
    const std::string csv = slurp(dir / "o1" / "histogram.csv");
    CHECK(csv.find("class,name,mean_ratio\n0,background,1\n1,organ,0\n") != std::string::npos);
    CHECK(csv.rfind("# tool: imbal", 0) == 0);

    // Forced foreground on a volume without foreground is degenerate under --strict.
    CHECK(run("histogram --dataset " + (dir / "bg").string() + " --patch 2x2x2 --strategy fg:1 --strict --out " +
              (dir / "o2").string()) == 1);
  }
  SUBCASE("missing or malformed input") {
    CHECK(run("histogram --dataset " + (dir / "nope").string() + " --out " + dir.string()) == 2);
    CHECK(run("histogram --out " + dir.string()) == 2);
    CHECK(run("histogram --dataset " + dir.string() + " --patch 4x4") == 2);
    CHECK(run("frobnicate") == 2);
  }
  SUBCASE("exact mode equals the all-origins average") {
    write_dataset(dir / "ds", 2, 40);
    REQUIRE(run("histogram --dataset " + (dir / "ds").string() + " --patch 4x4x2 --exact --out " + (dir / "o3").string()) == 0);
    const json h = read_json(dir / "o3" / "histogram.json");
    const LabelVolume a = load_label_volume(dir / "ds" / "case_0.json"), b = load_label_volume(dir / "ds" / "case_1.json");
    const int k = std::max(a.num_classes(), b.num_classes());
    const auto ea = scan_expectation(a, {4, 4, 2}, k), eb = scan_expectation(b, {4, 4, 2}, k);
    for (int c = 0; c < k; ++c)
      CHECK(h["histogram"]["classes"][c]["mean_ratio"].get<double>() ==
            doctest::Approx((ea[static_cast<std::size_t>(c)] + eb[static_cast<std::size_t>(c)]) / 2).epsilon(1e-12));
  }
  SUBCASE("config file values apply and explicit flags win") {
    write_dataset(dir / "ds", 1, 3);
    std::ofstream(dir / "cfg.json") << json{{"dataset", (dir / "ds").string()}, {"patch", "4x4x4"}, {"draws", 50},
                                            {"seed", 5}, {"exact", false}}
                                           .dump();
    REQUIRE(run("histogram --config " + (dir / "cfg.json").string() + " --seed 6 --out " + (dir / "o4").string()) == 0);
    const json h = read_json(dir / "o4" / "histogram.json");
    CHECK(h["config"]["patch"] == "4x4x4");
    CHECK(h["config"]["draws"] == 50);
    CHECK(h["config"]["seed"] == 6);
  }
}

TEST_CASE("optimize command") {
  const fs::path dir = imbal::testing::scratch_dir("cli_optimize");
  write_dataset(dir / "ds", 1, 11);
  const std::string ds = (dir / "ds").string();
  SUBCASE("one candidate") {
    REQUIRE(run("optimize --dataset " + ds + " --step 8x8x8 --min 8x8x8 --max 8x8x8 --out " + (dir / "a").string()) == 0);
    CHECK(read_json(dir / "a" / "ranking.json")["ranking"].size() == 1);
  }
  SUBCASE("reruns are byte-identical") {
    const std::string args = "optimize --dataset " + ds + " --step 4x4x2 --min 4x4x2 --max 12x12x6 --seed 3 --draws 200";
    REQUIRE(run(args + " --out " + (dir / "r1").string()) == 0);
    REQUIRE(run(args + " --out " + (dir / "r2").string()) == 0);
    CHECK(slurp(dir / "r1" / "ranking.json") == slurp(dir / "r2" / "ranking.json"));
  }
  SUBCASE("candidates 8x8x8 and full follow the exhaustive sigma order") {
    REQUIRE(run("optimize --dataset " + ds + " --step 8x8x8 --min 8x8x8 --max 8x8x8 --include-full --exact --out " +
                (dir / "x").string()) == 0);
    const json r = read_json(dir / "x" / "ranking.json");
    REQUIRE(r["ranking"].size() == 2);
    const LabelVolume v = load_label_volume(dir / "ds" / "case_0.json");
    const double s_small = sigma_of(scan_expectation(v, {8, 8, 8}, v.num_classes()));
    const double s_full = sigma_of(scan_expectation(v, v.dims(), v.num_classes()));
    const bool small_first = s_small < s_full;
    CHECK((r["ranking"][0]["patch"] == "full") == !small_first);
    CHECK(r["ranking"][0]["sigma"].get<double>() == doctest::Approx(std::min(s_small, s_full)).epsilon(1e-12));
    CHECK(r["ranking"][1]["sigma"].get<double>() == doctest::Approx(std::max(s_small, s_full)).epsilon(1e-12));
  }
}

TEST_CASE("evaluate, compare and drift commands") {
  const fs::path dir = imbal::testing::scratch_dir("cli_eval");
  write_dataset(dir / "gt", 3, 20);
  write_dataset(dir / "pred", 3, 21);
  const std::string gt = (dir / "gt").string(), pred = (dir / "pred").string();

  REQUIRE(run("evaluate --pred " + gt + " --gt " + gt + " --tau 1=1,2=1,3=1 --out " + (dir / "self").string()) == 0);
  const json self = read_json(dir / "self" / "eval_report.json");
  for (const json& row : self["report"]["rows"]) {
    if (!row["flags"].empty()) continue;
    CHECK(row["dsc"] == 1.0);
    CHECK(row["hd95_mm"] == 0.0);
    CHECK(row["surface_dice"] == 1.0);
  }
  REQUIRE(run("evaluate --pred " + pred + " --gt " + gt + " --postprocess --out " + (dir / "other").string()) == 0);

  const std::string self_report = (dir / "self" / "eval_report.json").string();
  REQUIRE(run("compare --a " + self_report + " --b " + self_report + " --out " + (dir / "cmp").string()) == 0);
  for (const json& row : read_json(dir / "cmp" / "comparison.json")["comparisons"]) CHECK(row["p_value"] == 1.0);
  REQUIRE(run("compare --a " + self_report + " --b " + (dir / "other" / "eval_report.json").string() + " --out " +
              (dir / "cmp2").string()) == 0);
  CHECK(slurp(dir / "cmp2" / "comparison.csv").find("class,metric,pairs") != std::string::npos);
  CHECK(run("compare --a " + self_report + " --b " + (dir / "missing.json").string() + " --out " + dir.string()) == 2);

  // Drift between one-hot probabilities of the references: confidence 1 everywhere.
  for (const char* split : {"train_p", "test_p"}) {
    fs::create_directories(dir / split);
    for (int i = 0; i < 3; ++i) {
      const LabelVolume v = load_label_volume(dir / "gt" / ("case_" + std::to_string(i) + ".json"));
      save_volume(dir / split / ("case_" + std::to_string(i) + ".json"), one_hot(v, 4));
    }
  }
  REQUIRE(run("drift --train-pred " + (dir / "train_p").string() + " --train-gt " + gt + " --test-pred " +
              (dir / "test_p").string() + " --test-gt " + gt + " --samples 10 --out " + (dir / "drift").string()) == 0);
  const json d = read_json(dir / "drift" / "drift_summary.json");
  for (const json& c : d["drift"]["classes"]) CHECK(c["drift"] == 0.0);
  CHECK(slurp(dir / "drift" / "drift_samples.csv").find("split,class,confidence\ntrain,1,1\n") != std::string::npos);
}

TEST_CASE("loss eval on the absent-class fixture") {
  const fs::path dir = imbal::testing::scratch_dir("cli_loss");
  ProbVolume p({4, 4, 4}, {1, 1, 1}, 3);
  LabelVolume g({4, 4, 4}, {1, 1, 1});
  for (std::int64_t v = 0; v < 64; ++v) {
    g.data()[static_cast<std::size_t>(v)] = v < 8 ? 1 : 0;
    p.at(v < 8 ? 1 : (v < 16 ? 2 : 0), v) = 1.0f;
  }
  save_volume(dir / "p.json", p);
  save_volume(dir / "g.json", g);
  REQUIRE(run("loss eval --pred " + (dir / "p.json").string() + " --gt " + (dir / "g.json").string() +
                  " --dice ca --dice-output score",
              dir / "ca.out") == 0);
  const json ca = json::parse(slurp(dir / "ca.out"));
  CHECK(ca["n_present"] == 1);
  CHECK(ca["variant"] == "ca");
  CHECK(ca["value"].get<double>() == doctest::Approx(16.0 / (16.0 + 1e-5)).epsilon(1e-14));

  REQUIRE(run("loss eval --pred " + (dir / "p.json").string() + " --gt " + (dir / "g.json").string() +
                  " --dice nnu --loss combined --ce-norm batch --out " + (dir / "o").string(),
              dir / "nnu.out") == 0);
  const json stored = read_json(dir / "o" / "loss.json");
  CHECK(stored["result"] == json::parse(slurp(dir / "nnu.out")));
  CHECK(stored["config"]["ce_norm"] == "batch");

  CHECK(run("loss eval --pred " + (dir / "p.json").string()) == 2);
  CHECK(run("loss eval --pred " + (dir / "p.json").string() + " --gt " + (dir / "g.json").string() + " --dice gdsc") == 2);
}

TEST_CASE("phantom command") {
  const fs::path dir = imbal::testing::scratch_dir("cli_phantom");
  std::ofstream(dir / "spec.json") << R"({"dims": [4, 4, 4], "spacing": [1, 1, 1],
    "organs": [{"class": 1, "shape": "box", "center": [1.5, 1.5, 1.5], "radii": [1, 1, 1]}]})";
  REQUIRE(run("phantom --spec " + (dir / "spec.json").string() + " --format mhd --out " + (dir / "out").string()) == 0);
  const LabelVolume v = load_label_volume(dir / "out" / "case_000.mhd");
  CHECK(v.class_counts(2) == std::vector<std::int64_t>{56, 8});
  CHECK(read_json(dir / "out" / "phantoms.manifest")["cases"][0]["class_counts"] == json::array({56, 8}));
}
