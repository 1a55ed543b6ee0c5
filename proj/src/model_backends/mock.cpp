// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <thread>

#include "qcaption/error.hpp"
#include "qcaption/model_backends.hpp"
#include "qcaption/util/codec.hpp"

namespace qcaption::models {

using nlohmann::json;

ScriptEntry ScriptEntry::from_json(const json& j) {
  ScriptEntry e;
  try {
    if (j.contains("match")) {
      const auto& m = j.at("match");
      if (m.contains("kind")) e.kind = backend_kind_from_string(m["kind"].get<std::string>());
      if (m.contains("prompt_contains")) e.prompt_contains = m["prompt_contains"].get<std::string>();
      if (m.contains("frame_index")) e.frame_index = m["frame_index"].get<std::int64_t>();
      if (m.contains("video_id")) e.video_id = m["video_id"].get<std::string>();
      if (m.contains("prompt_sha256")) e.prompt_sha256 = m["prompt_sha256"].get<std::string>();
    }
    e.response = j.value("response", std::string{});
    e.echo = j.value("echo", false);
    if (j.contains("error")) {
      const auto& err = j["error"];
      const auto name = err.is_string() ? err.get<std::string>() : err.at("code").get<std::string>();
      e.error = error_code_from_string(name);
      if (!e.error) fail(ErrorCode::ConfigError, "unknown error code '" + name + "' in mock script");
      if (err.is_object()) e.error_status = err.value("status", 0);
    }
    if (j.contains("times")) e.times = j["times"].get<int>();
    e.delay_ms = j.value("delay_ms", 0);
  } catch (const json::exception& ex) {
    fail(ErrorCode::ConfigError, std::string("bad mock script entry: ") + ex.what());
  }
  return e;
}

std::vector<ScriptEntry> load_script(const std::filesystem::path& jsonl) {
  std::ifstream in(jsonl);
  if (!in) fail(ErrorCode::FileNotFound, "mock script not found: " + jsonl.string());
  std::vector<ScriptEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& ex) {
      fail(ErrorCode::ConfigError, jsonl.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
    out.push_back(ScriptEntry::from_json(j));
  }
  return out;
}

MockBackend::MockBackend(BackendConfig cfg, std::vector<ScriptEntry> script)
    : ModelBackend(std::move(cfg)), script_(std::move(script)), used_(script_.size(), 0) {}

bool MockBackend::matches(const ScriptEntry& e, const ModelRequest& r) const {
  if (e.kind && *e.kind != kind()) return false;
  if (e.prompt_contains && r.prompt.find(*e.prompt_contains) == std::string::npos) return false;
  if (e.frame_index && r.metadata.frame_index != e.frame_index) return false;
  if (e.video_id && r.metadata.video_id != e.video_id) return false;
  if (e.prompt_sha256 && util::sha256_hex(r.prompt) != *e.prompt_sha256) return false;
  return true;
}

std::optional<std::size_t> MockBackend::pick(const ModelRequest& r) {
  if (config().ordered) {
    // Each entry serves `times` requests (once if unset) before the next one becomes current.
    auto budget = [&](std::size_t i) { return script_[i].times.value_or(1); };
    while (cursor_ < script_.size() && used_[cursor_] >= budget(cursor_)) ++cursor_;
    if (cursor_ < script_.size() && matches(script_[cursor_], r)) {
      const auto i = cursor_;
      if (++used_[i] >= budget(i)) ++cursor_;
      return i;
    }
    return std::nullopt;
  }
  for (std::size_t i = 0; i < script_.size(); ++i) {
    const bool available = !script_[i].times || used_[i] < *script_[i].times;
    if (available && matches(script_[i], r)) {
      ++used_[i];
      return i;
    }
  }
  return std::nullopt;
}

namespace {

std::string substitute(std::string text, const ModelRequest& r) {
  auto replace_all = [&](const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
      text.replace(pos, from.size(), to);
      pos += to.size();
    }
  };
  replace_all("{frame_index}", r.metadata.frame_index ? std::to_string(*r.metadata.frame_index) : "");
  replace_all("{video_id}", r.metadata.video_id.value_or(""));
  replace_all("{prompt}", r.prompt);
  return text;
}

}  // namespace

ModelResponse MockBackend::do_complete(const ModelRequest& r) {
  CallRecord rec;
  rec.kind = kind();
  rec.prompt = r.prompt;
  rec.video_id = r.metadata.video_id;
  rec.frame_index = r.metadata.frame_index;
  rec.attachments = r.attachments.size();
  rec.started = std::chrono::steady_clock::now();

  std::optional<std::size_t> idx;
  {
    std::lock_guard lock(mu_);
    idx = pick(r);
  }
  rec.entry = idx;

  auto finish = [&](std::string outcome) {
    rec.finished = std::chrono::steady_clock::now();
    rec.outcome = std::move(outcome);
    std::lock_guard lock(mu_);
    log_.push_back(std::move(rec));
  };

  if (!idx) {
    if (config().strict) {
      finish("ScriptExhausted");
      fail(ErrorCode::ScriptExhausted, "no scripted response for " + to_string(kind()) + " request" +
                                           (r.metadata.video_id ? " video=" + *r.metadata.video_id : "") +
                                           (r.metadata.frame_index ? " frame=" + std::to_string(*r.metadata.frame_index) : ""));
    }
    finish("ok");
    ModelResponse resp;
    resp.text = r.prompt;
    return resp;
  }

  const auto& e = script_[*idx];
  if (e.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(e.delay_ms));
  if (e.error) {
    finish(std::string(qcaption::to_string(*e.error)));
    throw Error(*e.error, "scripted failure").with_http_status(e.error_status);
  }
  ModelResponse resp;
  resp.text = e.echo ? r.prompt : substitute(e.response, r);
  finish("ok");
  return resp;
}

std::vector<CallRecord> MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

void MockBackend::reset_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

std::size_t MockBackend::max_overlap() const {
  std::vector<std::pair<std::chrono::steady_clock::time_point, int>> events;
  {
    std::lock_guard lock(mu_);
    for (const auto& c : log_) {
      events.emplace_back(c.started, +1);
      events.emplace_back(c.finished, -1);
    }
  }
  // Ends sort before starts at the same instant.
  std::sort(events.begin(), events.end());
  int cur = 0, best = 0;
  for (const auto& [_, d] : events) best = std::max(best, cur += d);
  return static_cast<std::size_t>(best);
}

}  // namespace qcaption::models
