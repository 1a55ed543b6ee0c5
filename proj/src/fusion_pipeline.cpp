// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/fusion_pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <numeric>
#include <thread>

#include "qcaption/error.hpp"

namespace qcaption::fusion {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(TaskKind k) { return k == TaskKind::Caption ? "caption" : "qa"; }
std::string to_string(QaMode m) { return m == QaMode::QuestionInFrame ? "question_in_frame" : "describe_then_answer"; }

namespace {

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "caption") return TaskKind::Caption;
  if (s == "qa") return TaskKind::Qa;
  fail(ErrorCode::ConfigError, "task_kind must be 'caption' or 'qa', got '" + s + "'");
}

QaMode qa_mode_from_string(const std::string& s) {
  if (s == "question_in_frame") return QaMode::QuestionInFrame;
  if (s == "describe_then_answer") return QaMode::DescribeThenAnswer;
  fail(ErrorCode::ConfigError, "qa_mode must be 'question_in_frame' or 'describe_then_answer', got '" + s + "'");
}

json opt_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_opt_string(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<std::string>();
}

using Clock = std::chrono::steady_clock;

std::int64_t ms_since(Clock::time_point t0) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
}

/// Runs fn(0..n-1) on up to `workers` threads; non-library exceptions are rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

void mark_failed(CaptionRecord& rec, const Error& e, const std::string& backend_id) {
  rec.failed = true;
  rec.text = std::string(kCaptionUnavailable);
  rec.error = e.what();
  rec.backend_id = backend_id;
}

void require_some_success(const std::vector<CaptionRecord>& records, const std::string& video_id) {
  if (records.empty() || std::any_of(records.begin(), records.end(), [](const auto& r) { return !r.failed; })) return;
  AllFramesFailedError err(
      "all " + std::to_string(records.size()) + " caption requests failed; first: " + records.front().error, records);
  err.with_origin(video_id.empty() ? std::nullopt : std::optional<std::string>(video_id), std::nullopt);
  throw err;
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return out.empty() ? "video" : out;
}

}  // namespace

// ---------------------------------------------------------------------------
// PipelineConfig

void PipelineConfig::validate() const {
  if (n_frames < 1) fail(ErrorCode::ConfigError, "n_frames must be >= 1");
  if (workers < 1) fail(ErrorCode::ConfigError, "workers must be >= 1");
  if (n_clips < 1) fail(ErrorCode::ConfigError, "n_clips must be >= 1");
  if (!(clip_len_s > 0.0)) fail(ErrorCode::ConfigError, "clip_len_s must be > 0");
  if (task_kind == TaskKind::Qa && (!question || question->empty())) {
    fail(ErrorCode::ConfigError, "qa tasks require a question");
  }
}

std::string PipelineConfig::frame_template() const {
  if (frame_prompt) return *frame_prompt;
  if (task_kind == TaskKind::Qa && qa_mode == QaMode::QuestionInFrame) return std::string(kDefaultFramePromptQa);
  return std::string(kDefaultFramePrompt);
}

std::string PipelineConfig::aggregation_template() const {
  if (aggregation_prompt) return *aggregation_prompt;
  return std::string(task_kind == TaskKind::Qa ? kDefaultAggregationPromptQa : kDefaultAggregationPrompt);
}

std::string PipelineConfig::rendered_frame_prompt() const {
  std::map<std::string, std::string> vars;
  if (question) vars["question"] = *question;
  return render_template(frame_template(), vars);
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "pipeline config must be an object");
  PipelineConfig c;
  try {
    if (j.contains("strategy")) {
      try {
        c.strategy = frames::strategy_from_string(j["strategy"].get<std::string>());
      } catch (const Error& e) {
        fail(ErrorCode::ConfigError, e.what());
      }
    }
    c.n_frames = j.value("n_frames", c.n_frames);
    c.frame_prompt = read_opt_string(j, "frame_prompt");
    c.aggregation_prompt = read_opt_string(j, "aggregation_prompt");
    c.use_llm = j.value("use_llm", c.use_llm);
    c.seed = j.value("seed", c.seed);
    if (j.contains("task_kind")) c.task_kind = task_kind_from_string(j["task_kind"].get<std::string>());
    if (j.contains("qa_mode")) c.qa_mode = qa_mode_from_string(j["qa_mode"].get<std::string>());
    c.question = read_opt_string(j, "question");
    c.workers = j.value("workers", c.workers);
    c.first_n_stride_s = j.value("first_n_stride_s", c.first_n_stride_s);
    c.katna_diff_threshold = j.value("katna_diff_threshold", c.katna_diff_threshold);
    c.katna_bins = j.value("katna_bins", c.katna_bins);
    c.n_clips = j.value("n_clips", c.n_clips);
    c.clip_len_s = j.value("clip_len_s", c.clip_len_s);
    if (j.contains("clip_dir")) c.clip_dir = j["clip_dir"].get<std::string>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

json PipelineConfig::to_json() const {
  // Execution knobs (workers, clip_dir) do not affect results and are omitted.
  return {{"strategy", std::string(frames::to_string(strategy))},
          {"n_frames", n_frames},
          {"frame_prompt", opt_string(frame_prompt)},
          {"aggregation_prompt", opt_string(aggregation_prompt)},
          {"use_llm", use_llm},
          {"seed", seed},
          {"task_kind", fusion::to_string(task_kind)},
          {"qa_mode", fusion::to_string(qa_mode)},
          {"question", opt_string(question)},
          {"first_n_stride_s", first_n_stride_s},
          {"katna_diff_threshold", katna_diff_threshold},
          {"katna_bins", katna_bins},
          {"n_clips", n_clips},
          {"clip_len_s", clip_len_s}};
}

// ---------------------------------------------------------------------------
// Bundle serialization

std::size_t CaptionBundle::failed_records() const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
}

json to_json(const CaptionBundle& b, bool include_timings) {
  json records = json::array();
  json errors = json::array();
  for (const auto& r : b.records) {
    json jr{{"position_index", r.position_index},
            {"frame_index", r.frame_index ? json(*r.frame_index) : json(nullptr)},
            {"timestamp_s", r.timestamp_s},
            {"clip", r.clip ? json{{"start_s", r.clip->start_s}, {"end_s", r.clip->end_s}} : json(nullptr)},
            {"text", r.text},
            {"backend_id", r.backend_id},
            {"retries", r.retries},
            {"failed", r.failed},
            {"error", r.failed ? json(r.error) : json(nullptr)}};
    if (include_timings) jr["latency_ms"] = r.latency_ms;
    records.push_back(std::move(jr));
    if (r.failed) errors.push_back({{"position_index", r.position_index}, {"error", r.error}});
  }
  json trace{{"selection", b.selection},
             {"frame_prompt", b.frame_prompt},
             {"aggregation_prompt", opt_string(b.aggregation_prompt)},
             {"aggregation_backend_id", b.aggregation_backend_id},
             {"errors", std::move(errors)}};
  if (include_timings) trace["timings_ms"] = b.timings_ms;
  return {{"schema_version", kBundleSchemaVersion},
          {"video_id", b.video_id},
          {"video", b.video},
          {"task", b.config.to_json()},
          {"records", std::move(records)},
          {"concatenated", b.concatenated},
          {"aggregated", opt_string(b.aggregated)},
          {"answer", b.answer()},
          {"trace", std::move(trace)}};
}

CaptionBundle bundle_from_json(const json& j) {
  CaptionBundle b;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kBundleSchemaVersion) {
      fail(ErrorCode::SchemaError, "unsupported bundle schema_version " + std::to_string(version));
    }
    b.video_id = j.at("video_id").get<std::string>();
    b.video = j.value("video", json::object());
    b.config = PipelineConfig::from_json(j.at("task"));
    for (const auto& jr : j.at("records")) {
      CaptionRecord r;
      r.position_index = jr.at("position_index").get<int>();
      if (!jr["frame_index"].is_null()) r.frame_index = jr["frame_index"].get<std::int64_t>();
      r.timestamp_s = jr.at("timestamp_s").get<double>();
      if (!jr["clip"].is_null()) r.clip = media::ClipSpec{jr["clip"].at("start_s"), jr["clip"].at("end_s")};
      r.text = jr.at("text").get<std::string>();
      r.backend_id = jr.value("backend_id", std::string{});
      r.retries = jr.value("retries", 0);
      r.failed = jr.value("failed", false);
      if (jr.contains("error") && !jr["error"].is_null()) r.error = jr["error"].get<std::string>();
      r.latency_ms = jr.value("latency_ms", std::int64_t{0});
      b.records.push_back(std::move(r));
    }
    b.concatenated = j.at("concatenated").get<std::string>();
    b.aggregated = read_opt_string(j, "aggregated");
    const auto& trace = j.at("trace");
    b.selection = trace.value("selection", json());
    b.frame_prompt = trace.value("frame_prompt", std::string{});
    b.aggregation_prompt = read_opt_string(trace, "aggregation_prompt");
    b.aggregation_backend_id = trace.value("aggregation_backend_id", std::string{});
    if (trace.contains("timings_ms")) b.timings_ms = trace["timings_ms"].get<std::map<std::string, std::int64_t>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("bad caption bundle: ") + e.what());
  }
  return b;
}

std::string serialize(const CaptionBundle& bundle) { return to_json(bundle, false).dump(2); }

// ---------------------------------------------------------------------------
// Stages

std::vector<CaptionRecord> caption_frames(const frames::KeyframeSet& set, const std::string& prompt,
                                          models::ModelBackend& backend, const std::string& video_id, int workers) {
  if (set.frames.empty()) fail(ErrorCode::InvalidArgument, "no frames to caption");
  std::vector<std::size_t> order(set.frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& fa = set.frames[a];
    const auto& fb = set.frames[b];
    return fa.timestamp_s != fb.timestamp_s ? fa.timestamp_s < fb.timestamp_s : fa.frame_index < fb.frame_index;
  });

  const std::optional<std::string> vid = video_id.empty() ? std::nullopt : std::optional<std::string>(video_id);
  std::vector<CaptionRecord> records(order.size());
  parallel_for(order.size(), workers, [&](std::size_t k) {
    const auto& frame = set.frames[order[k]];
    auto& rec = records[k];
    rec.position_index = static_cast<int>(k);
    rec.frame_index = frame.frame_index;
    rec.timestamp_s = frame.timestamp_s;
    try {
      const auto resp = models::caption_image(backend, frame, prompt, vid);
      rec.text = resp.text;
      rec.backend_id = resp.backend_id;
      rec.latency_ms = resp.latency_ms;
      rec.retries = resp.retries;
    } catch (const Error& e) {
      mark_failed(rec, e, backend.id());
    }
  });
  require_some_success(records, video_id);
  return records;
}

std::string concat_with_indexes(const std::vector<CaptionRecord>& records) {
  std::string out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].position_index != static_cast<int>(i)) {
      fail(ErrorCode::InvalidArgument, "records must be ordered with position indexes 0..N-1");
    }
    if (i) out.push_back('\n');
    out += std::to_string(i);
    out += ": ";
    for (char c : records[i].text) out.push_back(c == '\n' || c == '\r' ? ' ' : c);
  }
  return out;
}

std::string render_history(const History& history) {
  std::string out;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i) out.push_back('\n');
    out += "Q" + std::to_string(i + 1) + ": " + history[i].first + "\nA" + std::to_string(i + 1) + ": " + history[i].second;
  }
  return out;
}

Aggregation aggregate_captions(const std::string& captions, const std::string& aggregation_template,
                               const std::optional<std::string>& question, models::ModelBackend& backend,
                               const History& history, const std::string& video_id) {
  if (captions.empty()) fail(ErrorCode::InvalidArgument, "nothing to aggregate");
  std::map<std::string, std::string> vars{{"captions", captions}, {"history", render_history(history)}};
  if (question) vars["question"] = *question;
  Aggregation agg;
  agg.prompt = render_template(aggregation_template, vars);
  if (!history.empty() && aggregation_template.find("{history}") == std::string::npos) {
    agg.prompt = "Previous questions and answers about this video:\n" + vars["history"] + "\n\n" + agg.prompt;
  }
  models::RequestMetadata meta;
  if (!video_id.empty()) meta.video_id = video_id;
  agg.response = models::complete_text(backend, agg.prompt, meta);
  return agg;
}

CaptionStage caption_stage(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                           const std::string& video_id, const PipelineConfig& cfg, const Backends& backends) {
  cfg.validate();
  CaptionStage stage;
  stage.frame_prompt = cfg.rendered_frame_prompt();
  const auto t0 = Clock::now();

  if (!cfg.multiclips()) {
    if (!backends.image_lmm) fail(ErrorCode::ConfigError, "no image_lmm backend configured");
    frames::SelectRequest req;
    req.strategy = cfg.strategy;
    req.n = cfg.n_frames;
    req.seed = cfg.seed;
    req.first_n_stride_s = cfg.first_n_stride_s;
    req.diff_threshold = cfg.katna_diff_threshold;
    req.bins = cfg.katna_bins;
    const auto set = frames::select_frames(decoder, handle, req);
    stage.selection = frames::selection_report(set);
    stage.timings_ms["selection"] = ms_since(t0);
    const auto t1 = Clock::now();
    stage.records = caption_frames(set, stage.frame_prompt, *backends.image_lmm, video_id, cfg.workers);
    stage.timings_ms["captioning"] = ms_since(t1);
    return stage;
  }

  if (!backends.video_lmm) fail(ErrorCode::ConfigError, "multiclips needs a video_lmm backend");
  const auto clips = media::extract_clips(handle, cfg.n_clips, cfg.clip_len_s);
  json spans = json::array();
  for (const auto& c : clips) spans.push_back({{"start_s", c.start_s}, {"end_s", c.end_s}});
  stage.selection = {{"strategy", "clips"}, {"n_clips", cfg.n_clips}, {"clip_len_s", cfg.clip_len_s}, {"clips", spans}};

  fs::path dir = cfg.clip_dir;
  const bool temporary = dir.empty();
  if (temporary) {
    static std::atomic<int> counter{0};
    dir = fs::temp_directory_path() /
          ("qcaption-clips-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
  }
  fs::create_directories(dir);

  const std::optional<std::string> vid = video_id.empty() ? std::nullopt : std::optional<std::string>(video_id);
  stage.records.resize(clips.size());
  parallel_for(clips.size(), cfg.workers, [&](std::size_t k) {
    auto& rec = stage.records[k];
    rec.position_index = static_cast<int>(k);
    rec.timestamp_s = clips[k].start_s;
    rec.clip = clips[k];
    try {
      const auto path = dir / (safe_name(video_id) + "_clip" + std::to_string(k) + ".mp4");
      decoder.export_clip(handle, clips[k], path);
      const auto resp = models::caption_clip(*backends.video_lmm, path, stage.frame_prompt, vid,
                                             static_cast<std::int64_t>(k));
      rec.text = resp.text;
      rec.backend_id = resp.backend_id;
      rec.latency_ms = resp.latency_ms;
      rec.retries = resp.retries;
    } catch (Error& e) {
      e.with_origin(vid, static_cast<std::int64_t>(k));
      mark_failed(rec, e, backends.video_lmm->id());
    }
  });
  if (temporary) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  stage.timings_ms["captioning"] = ms_since(t0);
  require_some_success(stage.records, video_id);
  return stage;
}

CaptionBundle finish_bundle(CaptionStage stage, const media::VideoHandle& handle, const std::string& video_id,
                            const PipelineConfig& cfg, const Backends& backends, const History& history) {
  CaptionBundle b;
  b.video_id = video_id;
  b.video = media::to_json(handle);
  b.config = cfg;
  b.records = std::move(stage.records);
  b.selection = std::move(stage.selection);
  b.frame_prompt = std::move(stage.frame_prompt);
  b.timings_ms = std::move(stage.timings_ms);
  b.concatenated = concat_with_indexes(b.records);
  if (cfg.use_llm) {
    if (!backends.text_llm) fail(ErrorCode::ConfigError, "use_llm requires a text_llm backend");
    const auto t0 = Clock::now();
    auto agg = aggregate_captions(b.concatenated, cfg.aggregation_template(), cfg.question, *backends.text_llm, history,
                                  video_id);
    b.aggregated = std::move(agg.response.text);
    b.aggregation_prompt = std::move(agg.prompt);
    b.aggregation_backend_id = agg.response.backend_id;
    b.timings_ms["aggregation"] = ms_since(t0);
  }
  return b;
}

CaptionBundle run_pipeline(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                           const std::string& video_id, const PipelineConfig& cfg, const Backends& backends) {
  if (cfg.multiclips()) fail(ErrorCode::InvalidArgument, "run_pipeline does not handle multiclips; use run_multiclips");
  return finish_bundle(caption_stage(decoder, handle, video_id, cfg, backends), handle, video_id, cfg, backends);
}

CaptionBundle run_multiclips(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                             const std::string& video_id, const PipelineConfig& cfg, const Backends& backends) {
  auto c = cfg;
  c.strategy = frames::Strategy::Clips;
  return finish_bundle(caption_stage(decoder, handle, video_id, c, backends), handle, video_id, c, backends);
}

CaptionBundle run_task(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                       const std::string& video_id, const PipelineConfig& cfg, const Backends& backends,
                       const History& history) {
  return finish_bundle(caption_stage(decoder, handle, video_id, cfg, backends), handle, video_id, cfg, backends,
                       history);
}

}  // namespace qcaption::fusion
