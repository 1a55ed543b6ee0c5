// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace qcaption::eval {

inline constexpr int kReportSchemaVersion = 1;

/// One method on one dataset. Caption rows carry "cider" (display scale) and
/// "cider_raw"; qa rows carry "accuracy" (percent) and "score".
struct ReportRow {
  std::string label;
  std::string dataset;
  std::string task;  // "caption" | "qa"
  std::map<std::string, double> metrics;
  std::size_t tasks_total = 0;
  std::size_t tasks_scored = 0;
  std::size_t tasks_failed = 0;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  /// Run description (pipeline config, backend ids, manifest); free-form.
  nlohmann::json run = nlohmann::json::object();
  /// Tasks excluded from the metrics: {"key", "error"}.
  nlohmann::json failures = nlohmann::json::array();

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// Aligned plain-text table, one line per row.
  std::string to_text() const;
};

}  // namespace qcaption::eval
