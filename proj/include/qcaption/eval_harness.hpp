// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "qcaption/datasets.hpp"
#include "qcaption/evaluation/judge.hpp"
#include "qcaption/evaluation/report.hpp"
#include "qcaption/fusion_pipeline.hpp"

namespace qcaption::harness {

/// Backends by role. The config file is an object keyed by role
/// ("image_lmm", "video_lmm", "text_llm", "judge"), each value a backend
/// config; "judge_prompts" optionally overrides the judge template/nudge.
/// Relative script and cache paths resolve against the file's directory.
struct BackendSet {
  fusion::Backends pipeline;
  std::shared_ptr<models::ModelBackend> judge;
  eval::JudgeConfig judge_config;

  static BackendSet from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static BackendSet load(const std::filesystem::path& path);
  /// Role -> backend id, for reports.
  nlohmann::json describe() const;
};

struct RunSpec {
  std::string label;
  std::string dataset;  // report row dataset; defaults to the manifest stem
  fusion::PipelineConfig pipeline;
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  bool resume = false;
  bool strict_manifest = true;
  int workers = 1;                       // tasks in flight
  std::optional<std::size_t> max_tasks;  // stop after this many tasks execute

  data::ManifestKind manifest_kind() const;
  void validate() const;
  /// Identity of the run; a journal written under a different identity
  /// cannot be resumed.
  nlohmann::json identity() const;
};

/// One journal line.
struct TaskResult {
  std::string key;
  std::string video_id;
  std::optional<std::string> question;
  bool ok = false;
  std::string error;       // "<Code>: message" when !ok
  std::string prediction;  // caption or answer
  std::size_t failed_frames = 0;
  std::optional<bool> matched;  // qa
  std::optional<int> score;     // qa
  nlohmann::json bundle;        // canonical CaptionBundle document

  nlohmann::json to_json() const;
  static TaskResult from_json(const nlohmann::json& j);
};

struct Journal {
  nlohmann::json identity;
  std::vector<TaskResult> results;
};

/// Reads a journal, ignoring a torn final line.
Journal read_journal(const std::filesystem::path& path);

inline constexpr const char* kJournalFile = "journal.jsonl";
inline constexpr const char* kReportJsonFile = "report.json";
inline constexpr const char* kReportTextFile = "report.txt";

struct RunStats {
  std::size_t executed = 0;
  std::size_t skipped = 0;  // already journaled
  std::size_t pending = 0;  // left unexecuted because of max_tasks
};

/// Runs every unjournaled task, then aggregates the whole journal and writes
/// report.json / report.txt into out_dir. Per-task failures are recorded and
/// excluded from the metrics; config and manifest problems throw.
eval::EvalReport run_eval(const RunSpec& spec, const BackendSet& backends, const media::MediaDecoder& decoder,
                          RunStats* stats = nullptr);

/// Report row recomputed from journal results against the manifest.
eval::EvalReport aggregate_results(const RunSpec& spec, const data::Manifest& manifest,
                                   const std::vector<TaskResult>& results);

/// Same as above, reading spec.out_dir/journal.jsonl.
eval::EvalReport reaggregate(const RunSpec& spec);

struct ComparisonRow {
  std::string dataset;
  std::string label;
  std::string metric;
  double value = 0.0;
  double baseline = 0.0;
  std::optional<double> delta_pct;  // (value - baseline) / baseline * 100; unset when baseline is 0
};

struct Comparison {
  std::string baseline_label;
  std::vector<ComparisonRow> rows;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

double relative_improvement_pct(double baseline, double value);

/// Relative change of every metric of every row against the row labelled
/// `baseline_label` on the same dataset. Throws MissingBaseline when no row
/// carries that label, InvalidArgument when fewer than two rows share a
/// dataset with it or a (label, dataset) pair repeats.
Comparison compare_runs(const std::vector<eval::EvalReport>& reports, const std::string& baseline_label);

}  // namespace qcaption::harness
