// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/eval_harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include "qcaption/error.hpp"
#include "qcaption/evaluation/cider.hpp"

namespace qcaption::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- backends

namespace {

const char* const kRoles[] = {"image_lmm", "video_lmm", "text_llm", "judge"};

std::shared_ptr<models::ModelBackend> build_role(const std::string& role, json cfg, const fs::path& base_dir) {
  if (!cfg.is_object()) fail(ErrorCode::ConfigError, "backend '" + role + "' must be an object");
  if (!cfg.contains("kind")) cfg["kind"] = role;
  if (!cfg.contains("backend_id")) cfg["backend_id"] = role;
  auto c = models::BackendConfig::from_json(cfg);
  if (models::to_string(c.kind) != role) {
    fail(ErrorCode::ConfigError, "backend under '" + role + "' has kind " + models::to_string(c.kind));
  }
  if (!base_dir.empty()) {
    if (!c.script_path.empty() && c.script_path.is_relative()) c.script_path = base_dir / c.script_path;
    if (!c.cache_dir.empty() && c.cache_dir.is_relative()) c.cache_dir = base_dir / c.cache_dir;
  }
  return models::make_backend(c);
}

}  // namespace

BackendSet BackendSet::from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "backends config must be an object keyed by role");
  for (const auto& [key, _] : j.items()) {
    if (key != "judge_prompts" && std::find(std::begin(kRoles), std::end(kRoles), key) == std::end(kRoles)) {
      fail(ErrorCode::ConfigError, "unknown backend role '" + key + "'");
    }
  }
  BackendSet s;
  if (j.contains("image_lmm")) s.pipeline.image_lmm = build_role("image_lmm", j["image_lmm"], base_dir);
  if (j.contains("video_lmm")) s.pipeline.video_lmm = build_role("video_lmm", j["video_lmm"], base_dir);
  if (j.contains("text_llm")) s.pipeline.text_llm = build_role("text_llm", j["text_llm"], base_dir);
  if (j.contains("judge")) s.judge = build_role("judge", j["judge"], base_dir);
  s.judge_config = eval::JudgeConfig::from_json(j.value("judge_prompts", json()));
  return s;
}

BackendSet BackendSet::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open backends config " + path.string());
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ConfigError, path.string() + ": invalid JSON");
  return from_json(j, path.parent_path());
}

json BackendSet::describe() const {
  json d = json::object();
  auto put = [&](const char* role, const std::shared_ptr<models::ModelBackend>& b) {
    if (b) d[role] = {{"backend_id", b->id()}, {"model", b->config().model_name}, {"type", b->config().type}};
  };
  put("image_lmm", pipeline.image_lmm);
  put("video_lmm", pipeline.video_lmm);
  put("text_llm", pipeline.text_llm);
  put("judge", judge);
  return d;
}

// ---------------------------------------------------------------- run spec

data::ManifestKind RunSpec::manifest_kind() const {
  return pipeline.task_kind == fusion::TaskKind::Qa ? data::ManifestKind::Qa : data::ManifestKind::Caption;
}

void RunSpec::validate() const {
  if (label.empty()) fail(ErrorCode::ConfigError, "run label must be non-empty");
  if (manifest.empty()) fail(ErrorCode::ConfigError, "manifest path is required");
  if (out_dir.empty()) fail(ErrorCode::ConfigError, "output directory is required");
  if (workers < 1) fail(ErrorCode::ConfigError, "workers must be >= 1");
  // The question comes from each manifest line.
  auto probe = pipeline;
  if (probe.task_kind == fusion::TaskKind::Qa && !probe.question) probe.question = "?";
  probe.validate();
}

json RunSpec::identity() const {
  auto cfg = pipeline.to_json();
  cfg.erase("question");
  return {{"label", label},
          {"dataset", dataset.empty() ? manifest.stem().string() : dataset},
          {"task", std::string(data::to_string(manifest_kind()))},
          {"manifest", manifest.string()},
          {"pipeline", cfg}};
}

// ---------------------------------------------------------------- journal

json TaskResult::to_json() const {
  json j{{"type", "task"}, {"key", key}, {"video_id", video_id}, {"ok", ok}};
  if (question) j["question"] = *question;
  if (ok) {
    j["prediction"] = prediction;
    j["failed_frames"] = failed_frames;
    if (matched) j["matched"] = *matched;
    if (score) j["score"] = *score;
    j["bundle"] = bundle;
  } else {
    j["error"] = error;
  }
  return j;
}

TaskResult TaskResult::from_json(const json& j) {
  TaskResult r;
  r.key = j.at("key").get<std::string>();
  r.video_id = j.at("video_id").get<std::string>();
  if (j.contains("question")) r.question = j["question"].get<std::string>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.value("error", std::string{});
  r.prediction = j.value("prediction", std::string{});
  r.failed_frames = j.value("failed_frames", std::size_t{0});
  if (j.contains("matched")) r.matched = j["matched"].get<bool>();
  if (j.contains("score")) r.score = j["score"].get<int>();
  r.bundle = j.value("bundle", json());
  return r;
}

Journal read_journal(const fs::path& path) {
  Journal out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      spdlog::warn("journal {}: ignoring unreadable line {}", path.string(), line_no);
      continue;
    }
    try {
      if (j.value("type", std::string{}) == "run") {
        out.identity = j.at("identity");
      } else {
        out.results.push_back(TaskResult::from_json(j));
      }
    } catch (const json::exception&) {
      spdlog::warn("journal {}: ignoring malformed line {}", path.string(), line_no);
    }
  }
  return out;
}

namespace {

class JournalWriter {
 public:
  JournalWriter(const fs::path& path, const json& identity, const std::vector<TaskResult>& keep) {
    // Rewrite from scratch so a torn tail from an interrupted run is dropped.
    const auto tmp = fs::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << json{{"type", "run"}, {"identity", identity}}.dump() << '\n';
      for (const auto& r : keep) out << r.to_json().dump() << '\n';
      if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) fail(ErrorCode::IoError, "cannot append to " + path.string());
  }

  void append(const TaskResult& r) {
    const auto line = r.to_json().dump();
    std::lock_guard lock(mu_);
    out_ << line << '\n';
    out_.flush();
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
};

std::string describe_error(const std::exception& e) {
  if (dynamic_cast<const Error*>(&e)) return e.what();  // already "<Code>: message"
  return std::string("Internal: ") + e.what();
}

TaskResult run_one(const RunSpec& spec, const data::Manifest& manifest, const data::Task& task,
                   const BackendSet& backends, const media::MediaDecoder& decoder) {
  TaskResult r;
  r.key = task.key(manifest.kind);
  r.video_id = task.video_id;
  const bool qa = manifest.kind == data::ManifestKind::Qa;
  if (qa) r.question = task.question;
  try {
    const auto handle = decoder.probe(manifest.resolve(task));
    auto cfg = spec.pipeline;
    if (qa) cfg.question = task.question;
    const auto bundle = fusion::run_task(decoder, handle, task.video_id, cfg, backends.pipeline);
    r.prediction = bundle.answer();
    r.failed_frames = bundle.failed_records();
    r.bundle = fusion::to_json(bundle);
    if (qa) {
      const auto v = eval::judge_qa(task.question, task.answer, r.prediction, *backends.judge, backends.judge_config,
                                    task.video_id);
      r.matched = v.matched;
      r.score = v.score;
    }
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = describe_error(e);
    r.prediction.clear();
    r.bundle = json();
    spdlog::warn("task {} failed: {}", task.video_id, r.error);
  }
  return r;
}

}  // namespace

// ---------------------------------------------------------------- aggregation

eval::EvalReport aggregate_results(const RunSpec& spec, const data::Manifest& manifest,
                                   const std::vector<TaskResult>& results) {
  std::unordered_map<std::string, const TaskResult*> by_key;
  for (const auto& r : results) by_key[r.key] = &r;

  const auto identity = spec.identity();
  eval::ReportRow row;
  row.label = spec.label;
  row.dataset = identity["dataset"].get<std::string>();
  row.task = identity["task"].get<std::string>();
  row.tasks_total = manifest.tasks.size();

  eval::EvalReport report;
  std::size_t pending = 0;
  std::vector<eval::CiderItem> items;
  std::vector<eval::JudgeVerdict> verdicts;
  for (const auto& t : manifest.tasks) {
    auto it = by_key.find(t.key(manifest.kind));
    if (it == by_key.end()) {
      ++pending;
      continue;
    }
    const auto& r = *it->second;
    if (!r.ok) {
      ++row.tasks_failed;
      json f{{"video_id", r.video_id}, {"error", r.error}};
      if (r.question) f["question"] = *r.question;
      report.failures.push_back(std::move(f));
      continue;
    }
    ++row.tasks_scored;
    if (manifest.kind == data::ManifestKind::Caption) {
      items.push_back({t.video_id, r.prediction, t.references});
    } else {
      eval::JudgeVerdict v;
      v.matched = r.matched.value_or(false);
      v.score = r.score.value_or(0);
      verdicts.push_back(v);
    }
  }

  if (manifest.kind == data::ManifestKind::Caption && !items.empty()) {
    // IDF over every reference in the manifest, independent of which tasks failed.
    std::vector<std::vector<std::string>> all_refs;
    all_refs.reserve(manifest.tasks.size());
    for (const auto& t : manifest.tasks) all_refs.push_back(t.references);
    const auto index = eval::build_index(all_refs);
    const auto c = eval::corpus_cider(items, index);
    row.metrics["cider"] = c.scaled;
    row.metrics["cider_raw"] = c.raw;
  } else if (!verdicts.empty()) {
    const auto a = eval::aggregate_qa(verdicts);
    row.metrics["accuracy"] = a.accuracy;
    row.metrics["score"] = a.mean_score;
  }

  report.rows.push_back(std::move(row));
  report.run = identity;
  report.run["tasks_pending"] = pending;
  return report;
}

eval::EvalReport reaggregate(const RunSpec& spec) {
  const auto manifest = data::load_manifest(spec.manifest, spec.manifest_kind(), false);
  return aggregate_results(spec, manifest, read_journal(spec.out_dir / kJournalFile).results);
}

// ---------------------------------------------------------------- run

eval::EvalReport run_eval(const RunSpec& spec, const BackendSet& backends, const media::MediaDecoder& decoder,
                          RunStats* stats) {
  spec.validate();
  const auto kind = spec.manifest_kind();
  if (kind == data::ManifestKind::Qa && !backends.judge) fail(ErrorCode::ConfigError, "qa runs need a judge backend");
  const auto manifest = data::load_manifest(spec.manifest, kind, spec.strict_manifest);
  if (manifest.tasks.empty()) fail(ErrorCode::SchemaError, "manifest " + spec.manifest.string() + " has no tasks");

  fs::create_directories(spec.out_dir);
  const auto journal_path = spec.out_dir / kJournalFile;
  const auto identity = spec.identity();

  std::vector<TaskResult> previous;
  if (spec.resume && fs::exists(journal_path)) {
    auto journal = read_journal(journal_path);
    if (!journal.identity.is_null() && journal.identity != identity) {
      fail(ErrorCode::ConfigError, "journal in " + spec.out_dir.string() +
                                       " belongs to a different run; use a fresh --out or drop --resume");
    }
    previous = std::move(journal.results);
  }
  std::set<std::string> done;
  for (const auto& r : previous) done.insert(r.key);

  std::vector<const data::Task*> todo;
  for (const auto& t : manifest.tasks) {
    if (!done.count(t.key(kind))) todo.push_back(&t);
  }
  RunStats local;
  local.skipped = manifest.tasks.size() - todo.size();
  if (spec.max_tasks && todo.size() > *spec.max_tasks) {
    local.pending = todo.size() - *spec.max_tasks;
    todo.resize(*spec.max_tasks);
  }

  JournalWriter writer(journal_path, identity, previous);
  std::vector<TaskResult> fresh(todo.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      fresh[i] = run_one(spec, manifest, *todo[i], backends, decoder);
      writer.append(fresh[i]);
    }
  };
  const auto width = std::min<std::size_t>(static_cast<std::size_t>(spec.workers), std::max<std::size_t>(todo.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < width; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  local.executed = todo.size();

  previous.insert(previous.end(), std::make_move_iterator(fresh.begin()), std::make_move_iterator(fresh.end()));
  auto report = aggregate_results(spec, manifest, previous);
  report.run["backends"] = backends.describe();

  std::ofstream(spec.out_dir / kReportJsonFile, std::ios::binary | std::ios::trunc) << report.to_json().dump(2) << '\n';
  std::ofstream(spec.out_dir / kReportTextFile, std::ios::binary | std::ios::trunc) << report.to_text();
  if (stats) *stats = local;
  return report;
}

// ---------------------------------------------------------------- compare

double relative_improvement_pct(double baseline, double value) { return (value - baseline) / baseline * 100.0; }

Comparison compare_runs(const std::vector<eval::EvalReport>& reports, const std::string& baseline_label) {
  std::vector<const eval::ReportRow*> rows;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      if (!seen.insert({r.label, r.dataset}).second) {
        fail(ErrorCode::InvalidArgument, "duplicate row '" + r.label + "' for dataset '" + r.dataset + "'");
      }
      rows.push_back(&r);
    }
  }
  std::map<std::string, const eval::ReportRow*> baseline_by_dataset;
  for (const auto* r : rows) {
    if (r->label == baseline_label) baseline_by_dataset[r->dataset] = r;
  }
  if (baseline_by_dataset.empty()) fail(ErrorCode::MissingBaseline, "no report row labelled '" + baseline_label + "'");

  Comparison cmp;
  cmp.baseline_label = baseline_label;
  std::size_t compared = 0;
  for (const auto* r : rows) {
    auto b = baseline_by_dataset.find(r->dataset);
    if (b == baseline_by_dataset.end() || r == b->second) continue;
    ++compared;
    for (const auto& [metric, value] : r->metrics) {
      if (metric == "cider_raw") continue;
      auto bm = b->second->metrics.find(metric);
      if (bm == b->second->metrics.end()) continue;
      ComparisonRow c{r->dataset, r->label, metric, value, bm->second, std::nullopt};
      if (bm->second != 0.0) c.delta_pct = relative_improvement_pct(bm->second, value);
      cmp.rows.push_back(std::move(c));
    }
  }
  if (compared == 0) fail(ErrorCode::InvalidArgument, "nothing shares a dataset with baseline '" + baseline_label + "'");
  return cmp;
}

json Comparison::to_json() const {
  json out{{"baseline", baseline_label}, {"rows", json::array()}};
  for (const auto& r : rows) {
    out["rows"].push_back({{"dataset", r.dataset},
                           {"label", r.label},
                           {"metric", r.metric},
                           {"value", r.value},
                           {"baseline", r.baseline},
                           {"delta_pct", r.delta_pct ? json(*r.delta_pct) : json()}});
  }
  return out;
}

std::string Comparison::to_text() const {
  std::string out = "baseline: " + baseline_label + "\n";
  char buf[512];
  for (const auto& r : rows) {
    char delta[32] = "n/a";
    if (r.delta_pct) std::snprintf(delta, sizeof delta, "%+.1f%%", *r.delta_pct);
    std::snprintf(buf, sizeof buf, "%s | %s | %s: %.1f vs %.1f | %s\n", r.dataset.c_str(), r.label.c_str(),
                  r.metric.c_str(), r.value, r.baseline, delta);
    out += buf;
  }
  return out;
}

}  // namespace qcaption::harness
