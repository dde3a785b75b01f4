#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "imbal/loss.hpp"
#include "imbal/metrics.hpp"
#include "imbal/planner.hpp"

namespace imbal {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest round-trip decimal for a double; "nan"/"inf" spelled out.
std::string format_double(double v);

// JSON views. Every top-level document carries {"tool", "version", "config"}.
nlohmann::json to_json(const RatioHistogram& h);
nlohmann::json to_json(const ImbalanceReport& r);
nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const std::vector<ComparisonRow>& rows);
nlohmann::json to_json(const DriftReport& r, bool with_samples = false);
nlohmann::json to_json(const LossResult& r, DiceVariant variant);

/// Reads back what to_json(EvalReport) wrote (per-case rows and class names).
EvalReport eval_report_from_json(const nlohmann::json& j);

nlohmann::json provenance(const nlohmann::json& config);

/// `class,name,mean_ratio` preceded by `#` comment lines with the tool version, the
/// configuration and sigma.
std::string histogram_csv(const RatioHistogram& h, double sigma, const nlohmann::json& config);
std::string eval_report_csv(const EvalReport& r, const nlohmann::json& config);
std::string comparison_csv(const std::vector<ComparisonRow>& rows, const nlohmann::json& config);
/// Long format `split,class,confidence` of the exported samples.
std::string drift_samples_csv(const DriftReport& r, const nlohmann::json& config);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace imbal
