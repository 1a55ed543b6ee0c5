// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qcaption/error.hpp"
#include "qcaption/frame_selection.hpp"
#include "qcaption/media_io.hpp"
#include "qcaption/model_backends.hpp"
#include "qcaption/util/template.hpp"

namespace qcaption::fusion {

inline constexpr int kBundleSchemaVersion = 1;

inline constexpr std::string_view kCaptionUnavailable = "[caption unavailable]";

inline constexpr std::string_view kDefaultFramePrompt = "Describe this image in detail.";
inline constexpr std::string_view kDefaultFramePromptQa =
    "Look at this image and answer: {question}. If the image is irrelevant, say so.";
inline constexpr std::string_view kDefaultAggregationPrompt =
    "The following are captions of sequential frames (index = temporal order) from one video. Write a single "
    "coherent description of the video, preserving key details and order of events:\n{captions}";
inline constexpr std::string_view kDefaultAggregationPromptQa =
    "The following are per-frame answers about one video, in temporal order:\n{captions}\nUsing them, answer "
    "concisely: {question}";

enum class TaskKind { Caption, Qa };

/// QuestionInFrame embeds the question in every frame prompt (each new
/// question re-captions the frames). DescribeThenAnswer captions frames with
/// the generic prompt and shows the question only to the aggregation step.
enum class QaMode { QuestionInFrame, DescribeThenAnswer };

std::string to_string(TaskKind k);
std::string to_string(QaMode m);

struct PipelineConfig {
  frames::Strategy strategy = frames::Strategy::Katna;  // Clips = multiclips
  int n_frames = 8;
  std::optional<std::string> frame_prompt;        // unset: default for the task kind
  std::optional<std::string> aggregation_prompt;  // unset: default for the task kind
  bool use_llm = true;
  std::uint64_t seed = 0;
  TaskKind task_kind = TaskKind::Caption;
  QaMode qa_mode = QaMode::QuestionInFrame;
  std::optional<std::string> question;

  /// Concurrent stage-2 requests issued by this pipeline (the backend's own
  /// in-flight bound still applies).
  int workers = 4;

  double first_n_stride_s = 1.0;
  double katna_diff_threshold = 5.0;
  int katna_bins = 16;
  int n_clips = 4;
  double clip_len_s = 5.0;
  /// Where multiclips writes exported clips; empty uses a temporary directory
  /// that is removed afterwards.
  std::filesystem::path clip_dir;

  void validate() const;
  bool multiclips() const noexcept { return strategy == frames::Strategy::Clips; }
  /// Frame prompt template after defaults are applied (not yet rendered).
  std::string frame_template() const;
  std::string aggregation_template() const;
  /// Frame prompt actually sent (question substituted when it is part of it).
  std::string rendered_frame_prompt() const;

  static PipelineConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct CaptionRecord {
  int position_index = 0;
  std::optional<std::int64_t> frame_index;  // frames only
  double timestamp_s = 0.0;                 // frame time or clip start
  std::optional<media::ClipSpec> clip;      // clips only
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  int retries = 0;
  bool failed = false;
  std::string error;  // "<Code>: message" when failed
};

/// AllFramesFailed, carrying the per-item failure records.
class AllFramesFailedError : public Error {
 public:
  AllFramesFailedError(const std::string& message, std::vector<CaptionRecord> records)
      : Error(ErrorCode::AllFramesFailed, message), records_(std::move(records)) {}
  const std::vector<CaptionRecord>& records() const noexcept { return records_; }

 private:
  std::vector<CaptionRecord> records_;
};

struct Backends {
  std::shared_ptr<models::ModelBackend> image_lmm;
  std::shared_ptr<models::ModelBackend> video_lmm;
  std::shared_ptr<models::ModelBackend> text_llm;
};

/// Prior turns shown to the aggregation step in multi-turn sessions.
using History = std::vector<std::pair<std::string, std::string>>;

struct CaptionBundle {
  std::string video_id;
  nlohmann::json video;  // probe metadata
  PipelineConfig config;
  std::vector<CaptionRecord> records;
  std::string concatenated;
  std::optional<std::string> aggregated;
  nlohmann::json selection;  // frame selection report or clip spans
  std::string frame_prompt;
  std::optional<std::string> aggregation_prompt;  // rendered prompt sent to the LLM
  std::string aggregation_backend_id;
  std::map<std::string, std::int64_t> timings_ms;

  /// The task output: X_o when aggregated, otherwise C.
  const std::string& answer() const { return aggregated ? *aggregated : concatenated; }
  std::size_t failed_records() const;
};

/// Canonical document. Timings and latencies are wall-clock noise and are
/// only emitted when asked for, so the default output is reproducible.
nlohmann::json to_json(const CaptionBundle& bundle, bool include_timings = false);
CaptionBundle bundle_from_json(const nlohmann::json& j);
/// Canonical serialization (2-space indented JSON, no timings).
std::string serialize(const CaptionBundle& bundle);

using util::render_template;

/// One record per frame in timestamp order, all with the same prompt. Frames
/// that fail after retries become kCaptionUnavailable records.
std::vector<CaptionRecord> caption_frames(const frames::KeyframeSet& frames, const std::string& prompt,
                                          models::ModelBackend& backend, const std::string& video_id = {},
                                          int workers = 4);

/// "{i}: {text}" lines joined by '\n'; newlines inside a caption become spaces.
std::string concat_with_indexes(const std::vector<CaptionRecord>& records);

struct Aggregation {
  std::string prompt;
  models::ModelResponse response;
};

/// Renders the aggregation template ({captions}, {question}, {history}) and
/// sends one completion. Prior turns are prepended as context when the
/// template has no {history} placeholder.
Aggregation aggregate_captions(const std::string& captions, const std::string& aggregation_template,
                               const std::optional<std::string>& question, models::ModelBackend& backend,
                               const History& history = {}, const std::string& video_id = {});

std::string render_history(const History& history);

/// Stages 1 and 2 (selection + per-item captions), reusable across questions.
struct CaptionStage {
  std::vector<CaptionRecord> records;
  nlohmann::json selection;
  std::string frame_prompt;
  std::map<std::string, std::int64_t> timings_ms;
};

CaptionStage caption_stage(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                           const std::string& video_id, const PipelineConfig& cfg, const Backends& backends);

/// Stage 3: concatenation and (when use_llm) aggregation.
CaptionBundle finish_bundle(CaptionStage stage, const media::VideoHandle& handle, const std::string& video_id,
                            const PipelineConfig& cfg, const Backends& backends, const History& history = {});

/// Frame strategies. Rejects multiclips.
CaptionBundle run_pipeline(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                           const std::string& video_id, const PipelineConfig& cfg, const Backends& backends);

/// Four (n_clips) clips captioned by the video backend, then aggregated.
CaptionBundle run_multiclips(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                             const std::string& video_id, const PipelineConfig& cfg, const Backends& backends);

/// Dispatches on cfg.strategy.
CaptionBundle run_task(const media::MediaDecoder& decoder, const media::VideoHandle& handle,
                       const std::string& video_id, const PipelineConfig& cfg, const Backends& backends,
                       const History& history = {});

}  // namespace qcaption::fusion
