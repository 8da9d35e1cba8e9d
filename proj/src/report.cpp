#include "cslab/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

namespace cslab::report {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::vector<std::vector<std::string>> csv_rows(std::string_view csv) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& line : split(csv, '\n')) {
    if (!trim(line).empty()) rows.push_back(split(line, ','));
  }
  return rows;
}

std::optional<json> read_json(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return json::parse(read_file(p));
}

std::string opt(const std::optional<double>& v) { return v ? format_double(*v) : ""; }
std::string opt(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : ""; }

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           std::span<const Series> series) {
  constexpr double W = 640, H = 400, left = 70, right = 150, top = 40, bottom = 50;
  static constexpr std::array<const char*, 6> colors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         xml_escape(title) + "</text>\n";
  svg += "<g stroke=\"black\" fill=\"none\"><line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top + ph) + "\" x2=\"" +
         fixed(left + pw) + "\" y2=\"" + fixed(top + ph) + "\"/><line x1=\"" + fixed(left) + "\" y1=\"" + fixed(top) +
         "\" x2=\"" + fixed(left) + "\" y2=\"" + fixed(top + ph) + "\"/></g>\n";
  svg += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  svg += "<text x=\"" + fixed(left) + "\" y=\"" + fixed(top + ph + 16) + "\" text-anchor=\"middle\">" + tick(x0) + "</text>\n";
  svg += "<text x=\"" + fixed(left + pw) + "\" y=\"" + fixed(top + ph + 16) + "\" text-anchor=\"middle\">" + tick(x1) +
         "</text>\n";
  svg += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(top + ph) + "\" text-anchor=\"end\">" + tick(y0) + "</text>\n";
  svg += "<text x=\"" + fixed(left - 6) + "\" y=\"" + fixed(top + 4) + "\" text-anchor=\"end\">" + tick(y1) + "</text>\n";
  svg += "<text x=\"" + fixed(left + pw / 2) + "\" y=\"" + fixed(H - 12) + "\" text-anchor=\"middle\">" +
         xml_escape(x_label) + "</text>\n";
  svg += "<text transform=\"translate(18," + fixed(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         xml_escape(y_label) + "</text>\n";
  svg += "</g>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % colors.size()];
    std::string pts;
    for (auto [x, y] : series[i].points) {
      if (!pts.empty()) pts += ' ';
      pts += fixed(px(x)) + "," + fixed(py(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = top + 12 + 18 * static_cast<double>(i);
    svg += "<line x1=\"" + fixed(W - right + 12) + "\" y1=\"" + fixed(ly) + "\" x2=\"" + fixed(W - right + 32) +
           "\" y2=\"" + fixed(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>";
    svg += "<text x=\"" + fixed(W - right + 38) + "\" y=\"" + fixed(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(series[i].name) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::vector<SummaryRow> summarize(const fs::path& dir) {
  static constexpr std::array<const char*, 5> methods{"base", "sft_only", "reduce", "reduce_zero", "enhance"};
  std::vector<SummaryRow> rows;
  for (const char* method : methods) {
    SummaryRow row;
    row.method = method;
    bool any = false;
    const std::string log = std::string(method) == "base" ? "pretrain_log.csv" : "sasft_" + std::string(method) + "_log.csv";
    if (fs::exists(dir / log)) {
      const auto lines = csv_rows(read_file(dir / log));
      if (lines.size() > 1) {
        row.ce = std::stod(lines.back().at(1));
        row.aux = std::stod(lines.back().at(2));
        any = true;
      }
    }
    if (auto j = read_json(dir / ("cs_" + std::string(method) + ".json"))) {
      row.n_switched = j->at("n_switched").get<std::size_t>();
      row.n_prompts = j->at("n_prompts").get<std::size_t>();
      row.cs_ratio = j->at("ratio").get<double>();
      any = true;
    }
    if (auto j = read_json(dir / ("ppl_" + std::string(method) + ".json"))) {
      row.ppl = j->at("ppl").get<std::map<std::string, double>>();
      any = true;
    }
    if (auto j = read_json(dir / ("ztest_sft_only_vs_" + std::string(method) + ".json"))) {
      if (!j->at("z").is_null()) row.z = j->at("z").get<double>();
      row.p = j->at("p").get<double>();
    }
    if (any) rows.push_back(std::move(row));
  }
  const auto sft = std::find_if(rows.begin(), rows.end(), [](const SummaryRow& r) { return r.method == "sft_only"; });
  if (sft != rows.end()) {
    const SummaryRow ref = *sft;
    for (auto& r : rows) {
      if (ref.cs_ratio && r.cs_ratio && *ref.cs_ratio > 0.0) {
        r.relative_reduction = (*ref.cs_ratio - *r.cs_ratio) / *ref.cs_ratio;
      }
      for (const auto& [lang, v] : r.ppl) {
        auto it = ref.ppl.find(lang);
        if (it != ref.ppl.end()) r.ppl_delta[lang] = v / it->second - 1.0;
      }
    }
  }
  return rows;
}

std::string summary_csv(std::span<const SummaryRow> rows) {
  std::set<LanguageId> langs;
  for (const auto& r : rows) {
    for (const auto& [lang, v] : r.ppl) langs.insert(lang);
  }
  std::string out = "method,ce,aux,n_prompts,n_switched,cs_ratio,relative_reduction";
  for (const auto& l : langs) out += ",ppl_" + l;
  for (const auto& l : langs) out += ",ppl_delta_" + l;
  out += ",z,p\n";
  for (const auto& r : rows) {
    out += r.method + "," + opt(r.ce) + "," + opt(r.aux) + "," + opt(r.n_prompts) + "," + opt(r.n_switched) + "," +
           opt(r.cs_ratio) + "," + opt(r.relative_reduction);
    for (const auto& l : langs) out += "," + (r.ppl.count(l) ? format_double(r.ppl.at(l)) : "");
    for (const auto& l : langs) out += "," + (r.ppl_delta.count(l) ? format_double(r.ppl_delta.at(l)) : "");
    out += "," + opt(r.z) + "," + opt(r.p) + "\n";
  }
  return out;
}

std::string table1_csv(std::span<const SummaryRow> rows) {
  std::string out = "method,cs_ratio,relative_reduction\n";
  for (const auto& r : rows) {
    if (r.cs_ratio) out += r.method + "," + format_double(*r.cs_ratio) + "," + opt(r.relative_reduction) + "\n";
  }
  return out;
}

std::vector<Series> sweep_series(std::string_view sweep_csv) {
  std::vector<Series> out;
  const auto rows = csv_rows(sweep_csv);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != 5) throw ValidationError("report: malformed sweep row");
    auto it = std::find_if(out.begin(), out.end(), [&](const Series& s) { return s.name == r[0]; });
    if (it == out.end()) it = out.insert(out.end(), Series{r[0], {}});
    it->points.emplace_back(std::stod(r[1]), std::stod(r[4]));
  }
  return out;
}

Series profile_series(std::string_view profile_csv) {
  Series s{"mean pre-activation", {}};
  const auto rows = csv_rows(profile_csv);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() >= 2 && !r[1].empty()) s.points.emplace_back(std::stod(r[0]), std::stod(r[1]));
  }
  return s;
}

ReportResult write_report(const pipeline::Run& run) {
  ReportResult result;
  auto m = pipeline::begin("report");
  const auto dir = run.dir();
  fs::create_directories(dir);
  auto emit = [&](const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    m.outputs[name] = sha256_hex(bytes);
    result.files.push_back(name);
  };
  auto use = [&](const std::string& name) {
    if (!fs::exists(dir / name)) return false;
    m.inputs[name] = run.check_input(name);
    return true;
  };
  for (const char* method : {"base", "sft_only", "reduce", "reduce_zero", "enhance"}) {
    const std::string s(method);
    use(s == "base" ? "pretrain_log.csv" : "sasft_" + s + "_log.csv");
    use("cs_" + s + ".json");
    use("ppl_" + s + ".json");
    use("ztest_sft_only_vs_" + s + ".json");
  }
  const auto rows = summarize(dir);
  if (rows.empty()) result.warnings.push_back("no stage outputs found in " + dir.string());
  emit("summary.csv", summary_csv(rows));
  emit("table1.csv", table1_csv(rows));

  if (use("sweep.csv")) {
    const auto series = sweep_series(read_file(dir / "sweep.csv"));
    emit("sweep.svg", line_chart_svg("Ablation sweep", "lambda", "code-switching ratio", series));
  }
  if (use("profile.csv")) {
    const std::vector<Series> series{profile_series(read_file(dir / "profile.csv"))};
    emit("profile.svg", line_chart_svg("Pre-activation around the first switched token", "offset",
                                       "mean pre-activation", series));
  }
  std::vector<Series> curves;
  for (const char* method : {"sft_only", "reduce", "reduce_zero", "enhance"}) {
    const auto name = "sasft_" + std::string(method) + "_log.csv";
    if (!fs::exists(dir / name)) continue;
    Series s{method, {}};
    const auto lines = csv_rows(read_file(dir / name));
    for (std::size_t i = 1; i < lines.size(); ++i) s.points.emplace_back(std::stod(lines[i][0]), std::stod(lines[i][1]));
    curves.push_back(std::move(s));
  }
  if (!curves.empty()) emit("training.svg", line_chart_svg("Fine-tuning cross-entropy", "step", "ce", curves));
  for (const auto& w : result.warnings) run.log("report: warning: " + w);
  run.log("report: " + std::to_string(rows.size()) + " methods summarized");
  run.write_manifest("report", m);
  return result;
}

}  // namespace cslab::report
