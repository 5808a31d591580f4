#include <algorithm>
#include <cstdio>

#include "ctmr/errors.hpp"
#include "ctmr/metrics.hpp"

namespace ctmr::metrics {

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row = {{"scan_id", r.scan_id}};
    const auto values = r.values();
    for (int m = 0; m < kMetricCount; ++m) row[kMetricKeys[m]] = values[m];
    rows.push_back(row);
  }
  nlohmann::json summary;
  for (int m = 0; m < kMetricCount; ++m) {
    summary[kMetricKeys[m]] = {{"mean", report.summary[m].mean}, {"std", report.summary[m].std}};
  }
  return {{"label", report.label}, {"count", report.rows.size()}, {"rows", rows}, {"summary", summary}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  std::vector<MetricRow> rows;
  try {
    for (const auto& r : j.at("rows")) {
      MetricRow row;
      row.scan_id = r.at("scan_id").get<std::string>();
      row.dice = r.at("dice").get<double>();
      row.hausdorff_mm = r.at("hausdorff_mm").get<double>();
      row.avg_dist_mm = r.at("avg_dist_mm").get<double>();
      row.precision = r.at("precision").get<double>();
      row.recall = r.at("recall").get<double>();
      row.avd_ml = r.at("avd_ml").get<double>();
      rows.push_back(std::move(row));
    }
    return aggregate(j.at("label").get<std::string>(), std::move(rows));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("metrics report: ") + e.what());
  }
}

std::string format_table(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ArgumentError("format_table: no reports");
  constexpr int kLabelWidth = 26;
  constexpr int kColumnWidth = 18;
  auto pad = [](std::string s, int width) {
    // "±" is two bytes but one column.
    int cols = 0;
    for (unsigned char c : s) cols += (c & 0xC0) != 0x80;
    if (cols < width) s.append(static_cast<std::size_t>(width - cols), ' ');
    return s;
  };
  std::string out = pad("Metric", kLabelWidth);
  for (const auto& r : reports) out += pad(r.label + " (n=" + std::to_string(r.count()) + ")", kColumnWidth);
  out.erase(out.find_last_not_of(' ') + 1);
  out += "\n";
  std::size_t rule = static_cast<std::size_t>(kLabelWidth + kColumnWidth * static_cast<int>(reports.size()));
  out += std::string(rule, '-') + "\n";
  for (int m = 0; m < kMetricCount; ++m) {
    std::string line = pad(kMetricTitles[m], kLabelWidth);
    for (const auto& r : reports) {
      char cell[64];
      std::snprintf(cell, sizeof cell, "%.2f ± %.2f", r.summary[m].mean, r.summary[m].std);
      line += pad(cell, kColumnWidth);
    }
    line.erase(line.find_last_not_of(' ') + 1);
    out += line + "\n";
  }
  return out;
}

}  // namespace ctmr::metrics
