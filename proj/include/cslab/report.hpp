#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cslab/pipeline.hpp"

namespace cslab::report {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

// Self-contained SVG: axes with min/max ticks, one polyline per series, and a legend.
std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series);

struct SummaryRow {
  std::string method;
  std::optional<double> ce, aux;  // last training-log row
  std::optional<std::size_t> n_switched, n_prompts;
  std::optional<double> cs_ratio;
  std::optional<double> relative_reduction;  // against sft_only
  std::map<LanguageId, double> ppl;
  std::map<LanguageId, double> ppl_delta;  // relative to sft_only
  std::optional<double> z, p;              // sft_only vs this method
};

// One row per method with any output in `dir`, in pipeline order.
std::vector<SummaryRow> summarize(const std::filesystem::path& dir);
std::string summary_csv(std::span<const SummaryRow> rows);
// method,cs_ratio,relative_reduction
std::string table1_csv(std::span<const SummaryRow> rows);

// Points of a sweep CSV grouped by feature_role, in file order.
std::vector<Series> sweep_series(std::string_view sweep_csv);
// Offsets with a defined mean.
Series profile_series(std::string_view profile_csv);

struct ReportResult {
  std::vector<std::string> files;
  std::vector<std::string> warnings;
};

ReportResult write_report(const pipeline::Run& run);

}  // namespace cslab::report
