// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "qcaption/error.hpp"
#include "qcaption/media_io.hpp"
#include "qcaption/util/semaphore.hpp"

namespace qcaption::models {

enum class BackendKind { ImageLmm, VideoLmm, TextLlm, Judge };

std::string to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& name);

/// How a clip reaches a video-capable server: as a `video_url` content part
/// holding a file:// URL the server can read, or uploaded as multipart form data.
enum class VideoTransport { FilePath, Multipart };

struct BackendConfig {
  std::string backend_id;
  BackendKind kind = BackendKind::TextLlm;
  /// "openai" (HTTP chat completions), "mock" (scripted) or "echo".
  std::string type = "openai";
  std::string endpoint_url;
  std::string model_name;
  std::string api_key_env;
  double timeout_s = 120.0;
  int max_retries = 2;
  int max_in_flight = 4;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  double backoff_base_s = 1.0;
  VideoTransport video_transport = VideoTransport::FilePath;

  // mock only
  std::filesystem::path script_path;
  nlohmann::json script;  // inline alternative to script_path (array of entries)
  bool strict = true;
  bool ordered = false;

  /// Content-addressed response cache; empty disables it.
  std::filesystem::path cache_dir;

  void validate() const;
  static BackendConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Attachment {
  enum class Kind { Image, Clip };
  Kind kind = Kind::Image;
  std::string media_type;  // "image/png", "video/mp4"
  std::vector<std::uint8_t> bytes;
  std::filesystem::path clip_path;  // clips only
};

struct RequestMetadata {
  std::optional<std::string> video_id;
  std::optional<std::int64_t> frame_index;
};

struct ModelRequest {
  std::string prompt;
  std::vector<Attachment> attachments;
  RequestMetadata metadata;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ModelResponse {
  std::string text;
  std::int64_t latency_ms = 0;
  std::optional<TokenUsage> token_usage;
  std::string backend_id;
  int retries = 0;
  bool cached = false;
};

/// Base for every backend. complete() is the only entry point; it checks the
/// request shape against the backend kind, consults the cache, bounds the
/// number of in-flight calls and retries transient failures (Timeout,
/// RateLimited, HTTP 5xx and connection failures) with exponential backoff.
class ModelBackend {
 public:
  explicit ModelBackend(BackendConfig cfg);
  virtual ~ModelBackend() = default;
  ModelBackend(const ModelBackend&) = delete;
  ModelBackend& operator=(const ModelBackend&) = delete;

  ModelResponse complete(const ModelRequest& request);

  const BackendConfig& config() const noexcept { return cfg_; }
  BackendKind kind() const noexcept { return cfg_.kind; }
  const std::string& id() const noexcept { return cfg_.backend_id; }
  std::size_t peak_in_flight() const { return in_flight_.peak(); }

  /// Cheap reachability check for health endpoints.
  virtual bool ping() { return true; }

  /// Cache key over (backend_id, model_name, prompt, attachment bytes).
  std::string cache_key(const ModelRequest& request) const;

 protected:
  virtual ModelResponse do_complete(const ModelRequest& request) = 0;

 private:
  std::optional<ModelResponse> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const ModelResponse& resp) const;

  BackendConfig cfg_;
  util::Semaphore in_flight_;
};

/// One scripted exchange. Absent match fields match anything. `response` may
/// contain {frame_index}, {video_id} and {prompt} placeholders; `echo` returns
/// the prompt verbatim.
struct ScriptEntry {
  std::optional<BackendKind> kind;
  std::optional<std::string> prompt_contains;
  std::optional<std::int64_t> frame_index;
  std::optional<std::string> video_id;
  std::optional<std::string> prompt_sha256;

  std::string response;
  bool echo = false;
  std::optional<ErrorCode> error;
  int error_status = 0;
  std::optional<int> times;  // requests this entry may serve; unlimited (keyed) or 1 (ordered) if unset
  int delay_ms = 0;

  static ScriptEntry from_json(const nlohmann::json& j);
};

std::vector<ScriptEntry> load_script(const std::filesystem::path& jsonl);

struct CallRecord {
  BackendKind kind;
  std::string prompt;
  std::optional<std::string> video_id;
  std::optional<std::int64_t> frame_index;
  std::size_t attachments = 0;
  std::chrono::steady_clock::time_point started;
  std::chrono::steady_clock::time_point finished;
  std::optional<std::size_t> entry;  // index of the script entry used
  std::string outcome;                // "ok" or an error code name
};

/// Deterministic scripted backend. In keyed mode the first matching entry with
/// remaining uses answers; in ordered mode entries are consumed front to back
/// and each request must match the next one. Unmatched requests raise
/// ScriptExhausted when strict, otherwise echo the prompt.
class MockBackend final : public ModelBackend {
 public:
  MockBackend(BackendConfig cfg, std::vector<ScriptEntry> script);

  std::vector<CallRecord> calls() const;
  std::size_t call_count() const;
  void reset_log();
  /// Largest number of calls whose [started, finished] intervals overlap.
  std::size_t max_overlap() const;

 protected:
  ModelResponse do_complete(const ModelRequest& request) override;

 private:
  std::optional<std::size_t> pick(const ModelRequest& request);
  bool matches(const ScriptEntry& e, const ModelRequest& request) const;

  std::vector<ScriptEntry> script_;
  std::vector<int> used_;
  std::size_t cursor_ = 0;
  mutable std::mutex mu_;
  std::vector<CallRecord> log_;
};

/// OpenAI-compatible chat-completions client.
class OpenAIBackend final : public ModelBackend {
 public:
  explicit OpenAIBackend(BackendConfig cfg);
  bool ping() override;

  /// The JSON body sent for a request (exposed for documentation and tests).
  nlohmann::json request_body(const ModelRequest& request) const;

 protected:
  ModelResponse do_complete(const ModelRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string base_path_;
};

std::shared_ptr<ModelBackend> make_backend(const BackendConfig& cfg);

/// Typed helpers; each checks that the backend has the right kind.
ModelResponse caption_image(ModelBackend& backend, const media::FrameImage& frame, const std::string& prompt,
                            const std::optional<std::string>& video_id = std::nullopt);
ModelResponse caption_clip(ModelBackend& backend, const std::filesystem::path& clip_file, const std::string& prompt,
                           const std::optional<std::string>& video_id = std::nullopt,
                           std::optional<std::int64_t> clip_index = std::nullopt);
ModelResponse complete_text(ModelBackend& backend, const std::string& prompt, const RequestMetadata& metadata = {});

}  // namespace qcaption::models
