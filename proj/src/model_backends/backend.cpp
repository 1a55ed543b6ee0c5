// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <thread>

#include "qcaption/error.hpp"
#include "qcaption/model_backends.hpp"
#include "qcaption/util/codec.hpp"

namespace qcaption::models {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::ImageLmm: return "image_lmm";
    case BackendKind::VideoLmm: return "video_lmm";
    case BackendKind::TextLlm: return "text_llm";
    case BackendKind::Judge: return "judge";
  }
  return "unknown";
}

BackendKind backend_kind_from_string(const std::string& name) {
  for (auto k : {BackendKind::ImageLmm, BackendKind::VideoLmm, BackendKind::TextLlm, BackendKind::Judge}) {
    if (to_string(k) == name) return k;
  }
  fail(ErrorCode::ConfigError, "unknown backend kind '" + name + "'");
}

void BackendConfig::validate() const {
  auto bad = [&](const std::string& what) { fail(ErrorCode::ConfigError, "backend '" + backend_id + "': " + what); };
  if (backend_id.empty()) fail(ErrorCode::ConfigError, "backend_id must not be empty");
  if (type != "openai" && type != "mock" && type != "echo") bad("unknown type '" + type + "'");
  if (!(timeout_s > 0.0)) bad("timeout_s must be > 0");
  if (max_retries < 0) bad("max_retries must be >= 0");
  if (max_in_flight < 1) bad("max_in_flight must be >= 1");
  if (!(temperature >= 0.0)) bad("temperature must be >= 0");
  if (backoff_base_s < 0.0) bad("backoff_base_s must be >= 0");
  if (max_tokens && *max_tokens <= 0) bad("max_tokens must be > 0");
  if (type == "openai" && endpoint_url.empty()) bad("endpoint_url is required");
  if (!script.is_null() && !script.is_array()) bad("script must be an array of entries");
}

BackendConfig BackendConfig::from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "backend config must be an object");
  BackendConfig c;
  try {
    c.backend_id = j.value("backend_id", std::string{});
    c.kind = backend_kind_from_string(j.value("kind", std::string{"text_llm"}));
    c.type = j.value("type", std::string{"openai"});
    c.endpoint_url = j.value("endpoint_url", std::string{});
    c.model_name = j.value("model_name", std::string{});
    c.api_key_env = j.value("api_key_env", std::string{});
    c.timeout_s = j.value("timeout_s", c.timeout_s);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("max_tokens") && !j["max_tokens"].is_null()) c.max_tokens = j["max_tokens"].get<int>();
    c.backoff_base_s = j.value("backoff_base_s", c.backoff_base_s);
    const auto transport = j.value("video_transport", std::string{"path"});
    if (transport == "path") {
      c.video_transport = VideoTransport::FilePath;
    } else if (transport == "multipart") {
      c.video_transport = VideoTransport::Multipart;
    } else {
      fail(ErrorCode::ConfigError, "video_transport must be 'path' or 'multipart'");
    }
    if (j.contains("script")) {
      if (j["script"].is_string()) {
        c.script_path = j["script"].get<std::string>();
      } else {
        c.script = j["script"];
      }
    }
    c.strict = j.value("strict", c.strict);
    c.ordered = j.value("ordered", c.ordered);
    c.cache_dir = j.value("cache_dir", std::string{});
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad backend config: ") + e.what());
  }
  c.validate();
  return c;
}

json BackendConfig::to_json() const {
  json j{{"backend_id", backend_id},
         {"kind", to_string(kind)},
         {"type", type},
         {"endpoint_url", endpoint_url},
         {"model_name", model_name},
         {"api_key_env", api_key_env},
         {"timeout_s", timeout_s},
         {"max_retries", max_retries},
         {"max_in_flight", max_in_flight},
         {"temperature", temperature},
         {"backoff_base_s", backoff_base_s},
         {"video_transport", video_transport == VideoTransport::FilePath ? "path" : "multipart"},
         {"strict", strict},
         {"ordered", ordered}};
  j["max_tokens"] = max_tokens ? json(*max_tokens) : json(nullptr);
  if (!script_path.empty()) j["script"] = script_path.string();
  if (!cache_dir.empty()) j["cache_dir"] = cache_dir.string();
  return j;
}

namespace {

bool retryable(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Timeout:
    case ErrorCode::RateLimited: return true;
    case ErrorCode::HttpError: return e.http_status() == 0 || e.http_status() >= 500;
    default: return false;
  }
}

void check_shape(BackendKind kind, const ModelRequest& r) {
  std::size_t images = 0, clips = 0;
  for (const auto& a : r.attachments) (a.kind == Attachment::Kind::Image ? images : clips)++;
  bool ok = false;
  switch (kind) {
    case BackendKind::ImageLmm: ok = images == 1 && clips == 0; break;
    case BackendKind::VideoLmm: ok = clips == 1 && images == 0; break;
    case BackendKind::TextLlm:
    case BackendKind::Judge: ok = r.attachments.empty(); break;
  }
  if (!ok) {
    fail(ErrorCode::InvalidArgument, to_string(kind) + " request has " + std::to_string(images) + " image(s) and " +
                                         std::to_string(clips) + " clip(s)");
  }
}

}  // namespace

ModelBackend::ModelBackend(BackendConfig cfg)
    : cfg_(std::move(cfg)), in_flight_(static_cast<std::size_t>(std::max(1, cfg_.max_in_flight))) {
  cfg_.validate();
}

std::string ModelBackend::cache_key(const ModelRequest& request) const {
  util::Sha256Builder h;
  h.field(cfg_.backend_id).field(cfg_.model_name).field(request.prompt);
  for (const auto& a : request.attachments) {
    h.field(a.media_type);
    if (a.bytes.empty() && !a.clip_path.empty()) {
      h.field(util::read_file_bytes(a.clip_path));
    } else {
      h.field(a.bytes);
    }
  }
  return h.hex();
}

std::optional<ModelResponse> ModelBackend::cache_lookup(const std::string& key) const {
  const auto path = cfg_.cache_dir / key.substr(0, 2) / (key + ".json");
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    const auto j = json::parse(util::read_file_text(path));
    ModelResponse r;
    r.text = j.at("text").get<std::string>();
    r.backend_id = cfg_.backend_id;
    r.cached = true;
    if (j.contains("token_usage")) {
      r.token_usage = TokenUsage{j["token_usage"].value("prompt_tokens", 0), j["token_usage"].value("completion_tokens", 0)};
    }
    if (r.text.empty()) return std::nullopt;
    return r;
  } catch (const std::exception&) {
    return std::nullopt;  // corrupt entry: treat as a miss, it will be overwritten
  }
}

void ModelBackend::cache_store(const std::string& key, const ModelResponse& resp) const {
  const auto dir = cfg_.cache_dir / key.substr(0, 2);
  fs::create_directories(dir);
  json j{{"text", resp.text}, {"backend_id", resp.backend_id}, {"model_name", cfg_.model_name}};
  if (resp.token_usage) {
    j["token_usage"] = {{"prompt_tokens", resp.token_usage->prompt_tokens},
                        {"completion_tokens", resp.token_usage->completion_tokens}};
  }
  const auto tmp = dir / (key + ".tmp." + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id())));
  util::write_file_text(tmp, j.dump());
  fs::rename(tmp, dir / (key + ".json"));
}

ModelResponse ModelBackend::complete(const ModelRequest& request) {
  const auto& meta = request.metadata;
  try {
    check_shape(cfg_.kind, request);
  } catch (Error& e) {
    e.with_origin(meta.video_id, meta.frame_index);
    throw;
  }

  std::string key;
  if (!cfg_.cache_dir.empty()) {
    key = cache_key(request);
    if (auto hit = cache_lookup(key)) return *hit;
  }

  const auto t0 = std::chrono::steady_clock::now();
  ModelResponse resp;
  int attempt = 0;
  for (;;) {
    try {
      util::SemaphoreGuard guard(in_flight_);
      resp = do_complete(request);
      if (resp.text.empty()) fail(ErrorCode::MalformedResponse, "backend '" + cfg_.backend_id + "' returned empty text");
      break;
    } catch (Error& e) {
      e.with_origin(meta.video_id, meta.frame_index);
      if (!retryable(e) || attempt >= cfg_.max_retries) throw;
    }
    const double wait = cfg_.backoff_base_s * std::ldexp(1.0, attempt);
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    ++attempt;
  }
  resp.retries = attempt;
  resp.backend_id = cfg_.backend_id;
  resp.latency_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  if (!key.empty()) cache_store(key, resp);
  return resp;
}

std::shared_ptr<ModelBackend> make_backend(const BackendConfig& cfg) {
  cfg.validate();
  if (cfg.type == "openai") return std::make_shared<OpenAIBackend>(cfg);
  if (cfg.type == "echo") {
    auto c = cfg;
    c.strict = false;
    return std::make_shared<MockBackend>(c, std::vector<ScriptEntry>{});
  }
  std::vector<ScriptEntry> script;
  if (cfg.script.is_array()) {
    for (const auto& e : cfg.script) script.push_back(ScriptEntry::from_json(e));
  } else if (!cfg.script_path.empty()) {
    script = load_script(cfg.script_path);
  }
  return std::make_shared<MockBackend>(cfg, std::move(script));
}

namespace {

void require_kind(const ModelBackend& b, std::initializer_list<BackendKind> kinds, const char* op) {
  for (auto k : kinds) {
    if (b.kind() == k) return;
  }
  fail(ErrorCode::ConfigError, std::string(op) + " cannot use backend '" + b.id() + "' of kind " + to_string(b.kind()));
}

}  // namespace

ModelResponse caption_image(ModelBackend& backend, const media::FrameImage& frame, const std::string& prompt,
                            const std::optional<std::string>& video_id) {
  require_kind(backend, {BackendKind::ImageLmm}, "caption_image");
  if (!frame.valid()) fail(ErrorCode::InvalidArgument, "frame has no pixels");
  ModelRequest req;
  req.prompt = prompt;
  req.metadata = {video_id, frame.frame_index};
  Attachment a;
  a.kind = Attachment::Kind::Image;
  a.media_type = "image/png";
  a.bytes = util::encode_png_rgb(frame.pixels, frame.width, frame.height);
  req.attachments.push_back(std::move(a));
  return backend.complete(req);
}

ModelResponse caption_clip(ModelBackend& backend, const fs::path& clip_file, const std::string& prompt,
                           const std::optional<std::string>& video_id, std::optional<std::int64_t> clip_index) {
  require_kind(backend, {BackendKind::VideoLmm}, "caption_clip");
  std::error_code ec;
  if (!fs::is_regular_file(clip_file, ec)) {
    throw Error(ErrorCode::FileNotFound, "clip not found: " + clip_file.string()).with_origin(video_id, clip_index);
  }
  ModelRequest req;
  req.prompt = prompt;
  req.metadata = {video_id, clip_index};
  Attachment a;
  a.kind = Attachment::Kind::Clip;
  a.media_type = clip_file.extension() == ".mkv" ? "video/x-matroska" : "video/mp4";
  a.clip_path = fs::absolute(clip_file);
  a.bytes = util::read_file_bytes(clip_file);
  req.attachments.push_back(std::move(a));
  return backend.complete(req);
}

ModelResponse complete_text(ModelBackend& backend, const std::string& prompt, const RequestMetadata& metadata) {
  require_kind(backend, {BackendKind::TextLlm, BackendKind::Judge}, "complete_text");
  ModelRequest req;
  req.prompt = prompt;
  req.metadata = metadata;
  return backend.complete(req);
}

}  // namespace qcaption::models
