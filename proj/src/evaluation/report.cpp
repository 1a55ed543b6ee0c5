// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/evaluation/report.hpp"

#include <algorithm>
#include <cstdio>

#include "qcaption/error.hpp"

namespace qcaption::eval {

using nlohmann::json;

json EvalReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"label", r.label},
                      {"dataset", r.dataset},
                      {"task", r.task},
                      {"metrics", r.metrics},
                      {"tasks_total", r.tasks_total},
                      {"tasks_scored", r.tasks_scored},
                      {"tasks_failed", r.tasks_failed},
                      {"failure_policy", "failed tasks are excluded from metric denominators"}});
  }
  return {{"schema_version", kReportSchemaVersion}, {"rows", rows_j}, {"run", run}, {"failures", failures}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport rep;
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      fail(ErrorCode::SchemaError, "unsupported report schema_version");
    }
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.label = r.at("label").get<std::string>();
      row.dataset = r.value("dataset", std::string{});
      row.task = r.value("task", std::string{});
      row.metrics = r.at("metrics").get<std::map<std::string, double>>();
      row.tasks_total = r.value("tasks_total", std::size_t{0});
      row.tasks_scored = r.value("tasks_scored", std::size_t{0});
      row.tasks_failed = r.value("tasks_failed", std::size_t{0});
      rep.rows.push_back(std::move(row));
    }
    rep.run = j.value("run", json::object());
    rep.failures = j.value("failures", json::array());
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("bad report: ") + e.what());
  }
  return rep;
}

std::string EvalReport::to_text() const {
  std::vector<std::vector<std::string>> table{{"Method", "Dataset", "Task", "Metrics", "Scored", "Failed"}};
  for (const auto& r : rows) {
    std::string metrics;
    char buf[64];
    for (const auto& [name, value] : r.metrics) {
      if (name == "cider_raw") continue;
      std::snprintf(buf, sizeof buf, "%s=%.1f", name.c_str(), value);
      if (!metrics.empty()) metrics += "  ";
      metrics += buf;
    }
    table.push_back({r.label, r.dataset, r.task, metrics, std::to_string(r.tasks_scored) + "/" + std::to_string(r.tasks_total),
                     std::to_string(r.tasks_failed)});
  }
  std::vector<std::size_t> width(table.front().size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (std::size_t l = 0; l < table.size(); ++l) {
    std::string line;
    for (std::size_t c = 0; c < table[l].size(); ++c) {
      if (c) line += " | ";
      line += table[l][c];
      if (c + 1 < table[l].size()) line.append(width[c] - table[l][c].size(), ' ');
    }
    out += line + "\n";
    if (l == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w;
      out += std::string(total + 3 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

}  // namespace qcaption::eval
