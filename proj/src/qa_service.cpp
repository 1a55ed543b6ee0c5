// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/qa_service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <ctime>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "qcaption/error.hpp"
#include "qcaption/frame_selection.hpp"
#include "qcaption/util/codec.hpp"

namespace qcaption::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Bytes = std::vector<std::uint8_t>;

struct VideoEntry {
  std::string id;
  media::VideoHandle handle;
  bool owned = false;  // uploaded (lives in data_dir) vs registered by path
};

struct Turn {
  std::string question;
  std::string answer;
  json bundle;
};

struct Session {
  std::string id;
  std::string video_id;
  std::string created_at;
  fusion::PipelineConfig cfg;

  std::mutex run_mu;  // one ask at a time, in arrival order of lock acquisition
  std::optional<fusion::CaptionStage> stage;  // describe_then_answer cache, guarded by run_mu

  mutable std::mutex data_mu;
  std::vector<Turn> turns;
};

struct Job {
  std::string id;
  std::string status = "queued";  // queued | running | done | failed
  json result;
  json error;
};

/// Thrown by handlers to produce a specific HTTP error.
struct HttpFailure {
  int status;
  std::string code;
  std::string message;
  json detail;
};

[[noreturn]] void http_fail(int status, std::string code, std::string message, json detail = nullptr) {
  throw HttpFailure{status, std::move(code), std::move(message), std::move(detail)};
}

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::FileNotFound: return 404;
    case ErrorCode::DecodeError: return 400;
    case ErrorCode::InvalidArgument:
    case ErrorCode::ConfigError:
    case ErrorCode::TemplateError:
    case ErrorCode::SchemaError:
    case ErrorCode::TimestampOutOfRange:
    case ErrorCode::TooFewPoints:
    case ErrorCode::DimensionMismatch: return 422;
    case ErrorCode::Timeout:
    case ErrorCode::HttpError:
    case ErrorCode::MalformedResponse:
    case ErrorCode::RateLimited:
    case ErrorCode::UnsupportedByServer:
    case ErrorCode::ContextTooLong:
    case ErrorCode::ScriptExhausted:
    case ErrorCode::AllFramesFailed:
    case ErrorCode::JudgeUnparseable: return 502;
    default: return 500;
  }
}

json error_body(const std::string& code, const std::string& message, const json& detail = nullptr) {
  json e{{"code", code}, {"message", message}};
  if (!detail.is_null()) e["detail"] = detail;
  return {{"error", e}};
}

/// Maps any exception to (status, body).
std::pair<int, json> describe_exception(std::exception_ptr ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const HttpFailure& f) {
    return {f.status, error_body(f.code, f.message, f.detail)};
  } catch (const fusion::AllFramesFailedError& e) {
    json frames = json::array();
    for (const auto& r : e.records()) {
      json f{{"position", r.position_index}, {"timestamp_s", r.timestamp_s}, {"error", r.error}};
      if (r.frame_index) f["frame_index"] = *r.frame_index;
      frames.push_back(std::move(f));
    }
    return {502, error_body("BackendUnavailable", e.what(), {{"cause", "AllFramesFailed"}, {"frames", frames}})};
  } catch (const Error& e) {
    const int status = status_for(e.code());
    const std::string code = status == 502 ? "BackendUnavailable" : std::string(to_string(e.code()));
    json detail = status == 502 ? json{{"cause", to_string(e.code())}} : json();
    if (status == 502 && e.frame_index()) detail["frame_index"] = *e.frame_index();
    return {status, error_body(code, e.what(), detail)};
  } catch (const json::exception& e) {
    return {400, error_body("BadRequest", e.what())};
  } catch (const std::exception& e) {
    return {500, error_body("Internal", e.what())};
  }
}

void send_json(httplib::Response& res, int status, const json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  auto j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) http_fail(400, "BadRequest", "request body must be a JSON object");
  return j;
}

std::string random_token(const char* prefix) {
  static std::mutex mu;
  static std::mt19937_64 rng(std::random_device{}());
  std::lock_guard lock(mu);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return std::string(prefix) + buf;
}

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

struct QaService::Impl {
  ServiceConfig cfg;
  fusion::Backends backends;
  std::shared_ptr<const media::MediaDecoder> decoder;
  httplib::Server server;
  std::thread listener;
  int bound_port = -1;

  std::mutex state_mu;
  std::map<std::string, VideoEntry> videos;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::map<std::pair<std::string, std::int64_t>, std::shared_ptr<const Bytes>> frame_png;

  std::mutex jobs_mu;
  std::vector<std::thread> job_threads;
  std::mutex snapshot_mu;

  Impl(ServiceConfig c, fusion::Backends b, std::shared_ptr<const media::MediaDecoder> d)
      : cfg(std::move(c)), backends(std::move(b)), decoder(std::move(d)) {
    if (!decoder) decoder = std::make_shared<media::MediaDecoder>();
    if (cfg.data_dir.empty()) cfg.data_dir = fs::temp_directory_path() / ("qcaption-service-" + std::to_string(::getpid()));
    fs::create_directories(cfg.data_dir / "videos");
    load_snapshot();
    routes();
  }

  // ------------------------------------------------------------ helpers

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (...) {
        auto [status, body] = describe_exception(std::current_exception());
        send_json(res, status, body);
      }
    };
  }

  VideoEntry video(const std::string& id) {
    std::lock_guard lock(state_mu);
    auto it = videos.find(id);
    if (it == videos.end()) http_fail(404, "NotFound", "unknown video '" + id + "'");
    return it->second;
  }

  std::shared_ptr<Session> session(const std::string& id) {
    std::lock_guard lock(state_mu);
    auto it = sessions.find(id);
    if (it == sessions.end()) http_fail(404, "NotFound", "unknown session '" + id + "'");
    return it->second;
  }

  /// Request parameters layered over the configured defaults.
  fusion::PipelineConfig pipeline_from(const json& body, fusion::TaskKind kind) const {
    auto merged = cfg.pipeline_defaults.to_json();
    static const std::map<std::string, std::string> names{
        {"strategy", "strategy"},         {"n", "n_frames"},
        {"n_frames", "n_frames"},         {"seed", "seed"},
        {"use_llm", "use_llm"},           {"frame_prompt", "frame_prompt"},
        {"aggregation_prompt", "aggregation_prompt"}, {"n_clips", "n_clips"},
        {"clip_len_s", "clip_len_s"},     {"qa_mode", "qa_mode"}};
    for (const auto& [from, to] : names) {
      if (body.contains(from)) merged[to] = body[from];
    }
    merged["task_kind"] = fusion::to_string(kind);
    // Sessions get their question per ask; validate with a placeholder.
    if (kind == fusion::TaskKind::Qa && merged.value("question", json()).is_null()) merged["question"] = "?";
    auto out = fusion::PipelineConfig::from_json(merged);
    out.workers = cfg.pipeline_defaults.workers;
    out.clip_dir = cfg.pipeline_defaults.clip_dir;
    return out;
  }

  // ------------------------------------------------------------ snapshot

  void save_snapshot() {
    if (cfg.snapshot_path.empty()) return;
    json snap{{"videos", json::array()}, {"sessions", json::array()}};
    std::vector<std::shared_ptr<Session>> list;
    {
      std::lock_guard lock(state_mu);
      for (const auto& [id, v] : videos) {
        snap["videos"].push_back({{"video_id", id}, {"path", v.handle.path.string()}, {"owned", v.owned}});
      }
      for (const auto& [id, s] : sessions) list.push_back(s);
    }
    for (const auto& s : list) {
      json turns = json::array();
      {
        std::lock_guard lock(s->data_mu);
        for (const auto& t : s->turns) turns.push_back({{"question", t.question}, {"answer", t.answer}, {"bundle", t.bundle}});
      }
      auto c = s->cfg.to_json();
      c.erase("question");
      snap["sessions"].push_back(
          {{"session_id", s->id}, {"video_id", s->video_id}, {"created_at", s->created_at}, {"config", c}, {"turns", turns}});
    }
    std::lock_guard lock(snapshot_mu);
    const auto tmp = fs::path(cfg.snapshot_path.string() + ".tmp");
    if (cfg.snapshot_path.has_parent_path()) fs::create_directories(cfg.snapshot_path.parent_path());
    util::write_file_text(tmp, snap.dump());
    fs::rename(tmp, cfg.snapshot_path);
  }

  void load_snapshot() {
    if (cfg.snapshot_path.empty() || !fs::exists(cfg.snapshot_path)) return;
    auto snap = json::parse(util::read_file_text(cfg.snapshot_path), nullptr, false);
    if (snap.is_discarded()) {
      spdlog::warn("snapshot {} unreadable; starting empty", cfg.snapshot_path.string());
      return;
    }
    for (const auto& v : snap.value("videos", json::array())) {
      try {
        VideoEntry e;
        e.id = v.at("video_id").get<std::string>();
        e.owned = v.value("owned", false);
        e.handle = decoder->probe(v.at("path").get<std::string>());
        videos[e.id] = e;
      } catch (const std::exception& ex) {
        spdlog::warn("snapshot: dropping video: {}", ex.what());
      }
    }
    for (const auto& s : snap.value("sessions", json::array())) {
      try {
        auto sess = std::make_shared<Session>();
        sess->id = s.at("session_id").get<std::string>();
        sess->video_id = s.at("video_id").get<std::string>();
        if (!videos.count(sess->video_id)) continue;
        sess->created_at = s.value("created_at", std::string{});
        auto c = s.at("config");
        c["question"] = "?";
        sess->cfg = fusion::PipelineConfig::from_json(c);
        sess->cfg.workers = cfg.pipeline_defaults.workers;
        for (const auto& t : s.value("turns", json::array())) {
          sess->turns.push_back({t.at("question").get<std::string>(), t.at("answer").get<std::string>(), t.value("bundle", json())});
        }
        sessions[sess->id] = sess;
      } catch (const std::exception& ex) {
        spdlog::warn("snapshot: dropping session: {}", ex.what());
      }
    }
  }

  // ------------------------------------------------------------ videos

  json video_json(const VideoEntry& v) const {
    auto meta = media::to_json(v.handle);
    if (v.owned) meta.erase("path");
    return {{"video_id", v.id}, {"video", meta}};
  }

  VideoEntry register_video(const fs::path& path, const std::string& id, bool owned) {
    VideoEntry e;
    e.id = id;
    e.owned = owned;
    try {
      e.handle = decoder->probe(path);
    } catch (const Error& err) {
      if (owned) fs::remove(path);
      http_fail(400, "Undecodable", err.what());
    }
    if (e.handle.frame_count <= 0 || e.handle.duration_s <= 0.0) {
      if (owned) fs::remove(path);
      http_fail(400, "Undecodable", "no decodable video stream");
    }
    {
      std::lock_guard lock(state_mu);
      videos[id] = e;
    }
    save_snapshot();
    return e;
  }

  void post_video(const httplib::Request& req, httplib::Response& res) {
    const auto ctype = req.get_header_value("Content-Type");
    if (ctype.rfind("application/json", 0) == 0) {
      const auto body = parse_body(req);
      if (!cfg.allow_path_registration) http_fail(403, "Forbidden", "path registration is disabled");
      if (!body.contains("path") || !body["path"].is_string()) http_fail(400, "BadRequest", "expected {\"path\": ...}");
      const auto path = fs::absolute(body["path"].get<std::string>()).lexically_normal();
      std::error_code ec;
      if (!fs::is_regular_file(path, ec)) http_fail(400, "Undecodable", "no such file: " + path.string());
      if (fs::file_size(path, ec) > cfg.max_upload_bytes) http_fail(413, "PayloadTooLarge", "video exceeds size limit");
      const auto id = "v" + util::sha256_hex("path:" + path.string()).substr(0, 16);
      send_json(res, 200, video_json(register_video(path, id, false)));
      return;
    }
    std::string part;
    std::string_view bytes = req.body;
    if (req.is_multipart_form_data()) {
      if (!req.has_file("file")) http_fail(400, "BadRequest", "multipart upload needs a 'file' field");
      part = req.get_file_value("file").content;
      bytes = part;
    }
    if (bytes.empty()) http_fail(400, "Undecodable", "empty upload");
    if (bytes.size() > cfg.max_upload_bytes) http_fail(413, "PayloadTooLarge", "video exceeds size limit");
    const auto id = "v" + util::sha256_hex(bytes).substr(0, 16);
    const auto path = cfg.data_dir / "videos" / (id + ".video");
    {
      std::lock_guard lock(state_mu);
      if (auto it = videos.find(id); it != videos.end()) {
        send_json(res, 200, video_json(it->second));
        return;
      }
    }
    util::write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
    send_json(res, 200, video_json(register_video(path, id, true)));
  }

  void post_frames(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    const auto v = video(id);
    const auto body = parse_body(req);
    frames::SelectRequest sel;
    try {
      sel.strategy = frames::strategy_from_string(body.value("strategy", std::string("katna")));
    } catch (const Error& e) {
      http_fail(422, "InvalidStrategy", e.what());
    }
    if (sel.strategy == frames::Strategy::Clips) http_fail(422, "InvalidStrategy", "multiclips selects clips, not frames");
    sel.n = body.value("n", 8);
    sel.seed = body.value("seed", std::uint64_t{0});
    sel.first_n_stride_s = body.value("stride_s", cfg.pipeline_defaults.first_n_stride_s);
    sel.diff_threshold = cfg.pipeline_defaults.katna_diff_threshold;
    sel.bins = cfg.pipeline_defaults.katna_bins;
    if (sel.n < 1 || sel.n > 256) http_fail(422, "InvalidArgument", "n must be in 1..256");

    const auto set = frames::select_frames(*decoder, v.handle, sel);
    json list = json::array();
    for (std::size_t k = 0; k < set.frames.size(); ++k) {
      const auto& f = set.frames[k];
      auto png = std::make_shared<const Bytes>(util::encode_png_rgb(f.pixels, f.width, f.height));
      {
        std::lock_guard lock(state_mu);
        frame_png[{id, f.frame_index}] = png;
      }
      json e{{"position", k},
             {"frame_index", f.frame_index},
             {"timestamp_s", f.timestamp_s},
             {"url", "/v1/videos/" + id + "/frames/" + std::to_string(f.frame_index) + ".png"}};
      if (k < set.sharpness.size() && set.sharpness[k]) e["sharpness"] = *set.sharpness[k];
      list.push_back(std::move(e));
    }
    json out{{"video_id", id}, {"strategy", frames::to_string(set.strategy)}, {"n", sel.n}, {"frames", list}};
    if (sel.strategy == frames::Strategy::Random) out["seed"] = sel.seed;
    if (sel.strategy == frames::Strategy::Katna) out["fallback_frames"] = set.fallback_frames;
    send_json(res, 200, out);
  }

  void get_frame(const std::string& id, std::int64_t k, httplib::Response& res) {
    const auto v = video(id);
    if (k < 0 || k >= v.handle.frame_count) http_fail(404, "NotFound", "frame index out of range");
    std::shared_ptr<const Bytes> png;
    {
      std::lock_guard lock(state_mu);
      if (auto it = frame_png.find({id, k}); it != frame_png.end()) png = it->second;
    }
    if (!png) {
      // Not part of any listing yet: decode on demand.
      const double t = (static_cast<double>(k) + 0.25) / v.handle.fps;
      const auto frames = decoder->frames_at(v.handle, {t});
      png = std::make_shared<const Bytes>(util::encode_png_rgb(frames.at(0).pixels, frames[0].width, frames[0].height));
      std::lock_guard lock(state_mu);
      frame_png[{id, k}] = png;
    }
    res.status = 200;
    res.set_content(reinterpret_cast<const char*>(png->data()), png->size(), "image/png");
  }

  // ------------------------------------------------------------ captioning

  json run_caption(const VideoEntry& v, const fusion::PipelineConfig& pc) {
    return fusion::to_json(fusion::run_task(*decoder, v.handle, v.id, pc, backends), true);
  }

  void post_caption(const std::string& id, const httplib::Request& req, httplib::Response& res) {
    const auto v = video(id);
    const auto pc = pipeline_from(parse_body(req), fusion::TaskKind::Caption);
    const int items = pc.multiclips() ? pc.n_clips : pc.n_frames;
    if (items <= cfg.async_threshold) {
      send_json(res, 200, run_caption(v, pc));
      return;
    }
    auto job = std::make_shared<Job>();
    job->id = random_token("job-");
    {
      std::lock_guard lock(state_mu);
      jobs[job->id] = job;
    }
    std::lock_guard lock(jobs_mu);
    job_threads.emplace_back([this, job, v, pc] {
      set_job(*job, "running", nullptr, nullptr);
      try {
        auto result = run_caption(v, pc);
        set_job(*job, "done", std::move(result), nullptr);
      } catch (...) {
        auto [status, body] = describe_exception(std::current_exception());
        body["error"]["http_status"] = status;
        set_job(*job, "failed", nullptr, body["error"]);
      }
    });
    const auto url = "/v1/jobs/" + job->id;
    res.set_header("Location", url);
    send_json(res, 202, {{"job_id", job->id}, {"status", "queued"}, {"poll_url", url}});
  }

  void set_job(Job& job, const char* status, json result, json error) {
    std::lock_guard lock(state_mu);
    job.status = status;
    job.result = std::move(result);
    job.error = std::move(error);
  }

  void get_job(const std::string& id, httplib::Response& res) {
    std::lock_guard lock(state_mu);
    auto it = jobs.find(id);
    if (it == jobs.end()) http_fail(404, "NotFound", "unknown job '" + id + "'");
    const auto& j = *it->second;
    json out{{"job_id", j.id}, {"status", j.status}};
    if (!j.result.is_null()) out["result"] = j.result;
    if (!j.error.is_null()) out["error"] = j.error;
    send_json(res, 200, out);
  }

  // ------------------------------------------------------------ sessions

  static std::string turn_ref(const Session& s, std::size_t turn) {
    return "/v1/sessions/" + s.id + "/turns/" + std::to_string(turn) + "/bundle";
  }

  void post_session(const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    if (!body.contains("video_id") || !body["video_id"].is_string()) http_fail(400, "BadRequest", "video_id is required");
    const auto v = video(body["video_id"].get<std::string>());
    if (!body.contains("qa_mode")) body["qa_mode"] = "describe_then_answer";
    auto s = std::make_shared<Session>();
    s->id = random_token("s-");
    s->video_id = v.id;
    s->created_at = now_iso8601();
    s->cfg = pipeline_from(body, fusion::TaskKind::Qa);
    {
      std::lock_guard lock(state_mu);
      sessions[s->id] = s;
    }
    save_snapshot();
    auto c = s->cfg.to_json();
    c.erase("question");
    send_json(res, 201, {{"session_id", s->id}, {"video_id", s->video_id}, {"created_at", s->created_at}, {"config", c}});
  }

  void post_ask(const std::string& sid, const httplib::Request& req, httplib::Response& res) {
    const auto s = session(sid);
    const auto body = parse_body(req);
    if (!body.contains("question") || !body["question"].is_string()) http_fail(400, "BadRequest", "question is required");
    const auto question = body["question"].get<std::string>();
    if (question.find_first_not_of(" \t\r\n") == std::string::npos) http_fail(422, "InvalidArgument", "question is empty");
    const auto v = video(s->video_id);

    std::lock_guard run(s->run_mu);
    fusion::History history;
    {
      std::lock_guard lock(s->data_mu);
      if (s->turns.size() >= cfg.session_turn_limit) {
        http_fail(409, "TurnLimit", "session reached its limit of " + std::to_string(cfg.session_turn_limit) + " turns");
      }
      for (const auto& t : s->turns) history.emplace_back(t.question, t.answer);
    }
    auto pc = s->cfg;
    pc.question = question;
    fusion::CaptionBundle bundle;
    if (pc.qa_mode == fusion::QaMode::DescribeThenAnswer) {
      if (!s->stage) s->stage = fusion::caption_stage(*decoder, v.handle, v.id, pc, backends);
      bundle = fusion::finish_bundle(*s->stage, v.handle, v.id, pc, backends, history);
    } else {
      bundle = fusion::run_task(*decoder, v.handle, v.id, pc, backends, history);
    }
    std::size_t turn_no = 0;
    {
      std::lock_guard lock(s->data_mu);
      s->turns.push_back({question, bundle.answer(), fusion::to_json(bundle, true)});
      turn_no = s->turns.size();
    }
    save_snapshot();
    send_json(res, 200,
              {{"session_id", s->id},
               {"turn", turn_no},
               {"question", question},
               {"answer", bundle.answer()},
               {"failed_frames", bundle.failed_records()},
               {"bundle_ref", turn_ref(*s, turn_no)}});
  }

  void get_session(const std::string& sid, httplib::Response& res) {
    const auto s = session(sid);
    json turns = json::array();
    {
      std::lock_guard lock(s->data_mu);
      for (std::size_t i = 0; i < s->turns.size(); ++i) {
        turns.push_back({{"turn", i + 1},
                         {"question", s->turns[i].question},
                         {"answer", s->turns[i].answer},
                         {"bundle_ref", turn_ref(*s, i + 1)}});
      }
    }
    send_json(res, 200,
              {{"session_id", s->id},
               {"video_id", s->video_id},
               {"created_at", s->created_at},
               {"qa_mode", fusion::to_string(s->cfg.qa_mode)},
               {"turn_limit", cfg.session_turn_limit},
               {"turns", turns}});
  }

  void get_turn_bundle(const std::string& sid, std::size_t turn, httplib::Response& res) {
    const auto s = session(sid);
    std::lock_guard lock(s->data_mu);
    if (turn < 1 || turn > s->turns.size()) http_fail(404, "NotFound", "no such turn");
    send_json(res, 200, s->turns[turn - 1].bundle);
  }

  // ------------------------------------------------------------ health

  void get_health(httplib::Response& res) {
    json b = json::object();
    bool all = true;
    auto put = [&](const char* role, const std::shared_ptr<models::ModelBackend>& m) {
      if (!m) return;
      bool ok = false;
      try {
        ok = m->ping();
      } catch (const std::exception&) {
        ok = false;
      }
      all = all && ok;
      b[role] = {{"backend_id", m->id()}, {"reachable", ok}};
    };
    put("image_lmm", backends.image_lmm);
    put("video_lmm", backends.video_lmm);
    put("text_llm", backends.text_llm);
    std::size_t n_videos = 0, n_sessions = 0;
    {
      std::lock_guard lock(state_mu);
      n_videos = videos.size();
      n_sessions = sessions.size();
    }
    send_json(res, 200,
              {{"status", "ok"},
               {"api_version", "v1"},
               {"backends_reachable", all},
               {"backends", b},
               {"videos", n_videos},
               {"sessions", n_sessions}});
  }

  // ------------------------------------------------------------ wiring

  void routes() {
    server.set_payload_max_length(cfg.max_upload_bytes);
    server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", cfg.cors_origin);
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    auto health = guarded([this](const httplib::Request&, httplib::Response& res) { get_health(res); });
    server.Get("/healthz", health);
    server.Get("/v1/healthz", health);

    server.Post("/v1/videos", guarded([this](const httplib::Request& req, httplib::Response& res) { post_video(req, res); }));
    server.Get("/v1/videos", guarded([this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      std::lock_guard lock(state_mu);
      for (const auto& [id, v] : videos) list.push_back(video_json(v));
      send_json(res, 200, {{"videos", list}});
    }));
    server.Get(R"(/v1/videos/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, video_json(video(req.matches[1])));
    }));
    server.Post(R"(/v1/videos/([^/]+)/frames)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      post_frames(req.matches[1], req, res);
    }));
    server.Get(R"(/v1/videos/([^/]+)/frames/(\d+)\.png)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 get_frame(req.matches[1], std::stoll(req.matches[2]), res);
               }));
    server.Post(R"(/v1/videos/([^/]+)/caption)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      post_caption(req.matches[1], req, res);
    }));
    server.Get(R"(/v1/jobs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      get_job(req.matches[1], res);
    }));

    server.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) { post_session(req, res); }));
    server.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      get_session(req.matches[1], res);
    }));
    server.Post(R"(/v1/sessions/([^/]+)/ask)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      post_ask(req.matches[1], req, res);
    }));
    server.Get(R"(/v1/sessions/([^/]+)/turns/(\d+)/bundle)",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 get_turn_bundle(req.matches[1], std::stoul(req.matches[2]), res);
               }));

    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const char* code = res.status == 413 ? "PayloadTooLarge" : res.status == 404 ? "NotFound" : "HttpError";
      send_json(res, res.status, error_body(code, httplib::status_message(res.status)));
    });

    if (!cfg.static_dir.empty()) {
      if (!server.set_mount_point("/", cfg.static_dir.string())) {
        spdlog::warn("static UI directory {} not found; not serving /", cfg.static_dir.string());
      }
    }
  }

  int bind() {
    if (cfg.port == 0) {
      bound_port = server.bind_to_any_port(cfg.host);
    } else {
      bound_port = server.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1;
    }
    if (bound_port < 0) fail(ErrorCode::IoError, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    return bound_port;
  }

  void shutdown() {
    server.stop();
    if (listener.joinable()) listener.join();
    std::lock_guard lock(jobs_mu);
    for (auto& t : job_threads) {
      if (t.joinable()) t.join();
    }
    job_threads.clear();
  }
};

QaService::QaService(ServiceConfig cfg, fusion::Backends backends, std::shared_ptr<const media::MediaDecoder> decoder)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(backends), std::move(decoder))) {}

QaService::~QaService() { impl_->shutdown(); }

int QaService::start() {
  const int port = impl_->bind();
  impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void QaService::serve() {
  impl_->bind();
  spdlog::info("serving on http://{}:{}", impl_->cfg.host, impl_->bound_port);
  impl_->server.listen_after_bind();
}

void QaService::stop() { impl_->shutdown(); }

int QaService::port() const { return impl_->bound_port; }

std::string QaService::base_url() const {
  return "http://" + impl_->cfg.host + ":" + std::to_string(impl_->bound_port);
}

}  // namespace qcaption::service
