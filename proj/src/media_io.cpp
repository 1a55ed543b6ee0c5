// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/media_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <map>
#include <sstream>

#include "qcaption/error.hpp"
#include "qcaption/util/codec.hpp"
#include "qcaption/util/subprocess.hpp"

namespace qcaption::media {
namespace {

std::string format_seconds(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

double parse_rational(const std::string& text) {
  const auto slash = text.find('/');
  try {
    if (slash == std::string::npos) return std::stod(text);
    const double num = std::stod(text.substr(0, slash));
    const double den = std::stod(text.substr(slash + 1));
    return den == 0.0 ? 0.0 : num / den;
  } catch (const std::exception&) {
    return 0.0;
  }
}

double json_number(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key)) return 0.0;
  const auto& v = obj.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    try {
      return std::stod(v.get<std::string>());
    } catch (const std::exception&) {
      return 0.0;
    }
  }
  return 0.0;
}

void apply_env(DecoderConfig& cfg) {
  if (const char* v = std::getenv("QCAPTION_FFMPEG"); v && *v) cfg.ffmpeg = v;
  if (const char* v = std::getenv("QCAPTION_FFPROBE"); v && *v) cfg.ffprobe = v;
  if (const char* v = std::getenv("QCAPTION_DECODER_ARGS"); v && *v) cfg.extra_input_args = split_ws(v);
  if (const char* v = std::getenv("QCAPTION_DECODER_CONCURRENCY"); v && *v) {
    cfg.max_concurrent = std::max(1, std::atoi(v));
  }
}

}  // namespace

DecoderConfig DecoderConfig::from_env() {
  DecoderConfig cfg;
  apply_env(cfg);
  return cfg;
}

DecoderConfig DecoderConfig::from_json(const nlohmann::json& j) {
  DecoderConfig cfg;
  if (j.is_object()) {
    cfg.ffmpeg = j.value("ffmpeg", cfg.ffmpeg);
    cfg.ffprobe = j.value("ffprobe", cfg.ffprobe);
    cfg.extra_input_args = j.value("extra_input_args", cfg.extra_input_args);
    cfg.clip_codec_args = j.value("clip_codec_args", cfg.clip_codec_args);
    cfg.max_concurrent = j.value("max_concurrent", cfg.max_concurrent);
  }
  apply_env(cfg);
  return cfg;
}

MediaDecoder::MediaDecoder(DecoderConfig cfg)
    : cfg_(std::move(cfg)),
      limiter_(std::make_shared<util::Semaphore>(static_cast<std::size_t>(std::max(1, cfg_.max_concurrent)))) {}

VideoHandle MediaDecoder::probe(const std::filesystem::path& path) const {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) fail(ErrorCode::FileNotFound, path.string());
  if (std::filesystem::file_size(path, ec) == 0) fail(ErrorCode::DecodeError, path.string() + ": empty file");

  util::RunResult res;
  {
    util::SemaphoreGuard guard(*limiter_);
    res = util::run_capture({cfg_.ffprobe, "-v", "error", "-select_streams", "v:0", "-count_packets",
                             "-show_entries",
                             "stream=width,height,r_frame_rate,avg_frame_rate,nb_read_packets,nb_frames,duration:"
                             "format=duration",
                             "-of", "json", path.string()});
  }
  if (res.exit_code != 0) {
    fail(ErrorCode::DecodeError, path.string() + ": " + util::tail_excerpt(res.err));
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(res.out.begin(), res.out.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::DecodeError, path.string() + ": unreadable probe output: " + e.what());
  }
  if (!doc.contains("streams") || doc["streams"].empty()) {
    fail(ErrorCode::DecodeError, path.string() + ": no video stream");
  }
  const auto& stream = doc["streams"][0];

  VideoHandle h;
  h.path = path;
  h.width = stream.value("width", 0);
  h.height = stream.value("height", 0);
  h.fps = parse_rational(stream.value("avg_frame_rate", std::string("0/0")));
  if (!(h.fps > 0.0)) h.fps = parse_rational(stream.value("r_frame_rate", std::string("0/0")));
  h.frame_count = static_cast<std::int64_t>(json_number(stream, "nb_read_packets"));
  if (h.frame_count <= 0) h.frame_count = static_cast<std::int64_t>(json_number(stream, "nb_frames"));

  double duration = doc.contains("format") ? json_number(doc["format"], "duration") : 0.0;
  if (!(duration > 0.0)) duration = json_number(stream, "duration");

  if (h.width <= 0 || h.height <= 0 || !(h.fps > 0.0)) {
    fail(ErrorCode::DecodeError, path.string() + ": incomplete stream metadata");
  }
  if (h.frame_count <= 0 && duration > 0.0) h.frame_count = std::llround(duration * h.fps);
  if (h.frame_count <= 0) fail(ErrorCode::DecodeError, path.string() + ": no decodable frames");
  // Still images report no container duration; one frame lasts 1/fps.
  if (!(duration > 0.0)) duration = static_cast<double>(h.frame_count) / h.fps;
  h.duration_s = duration;
  return h;
}

std::int64_t MediaDecoder::frame_index_at(const VideoHandle& handle, double t) {
  const auto idx = static_cast<std::int64_t>(std::floor(t * handle.fps + 1e-9));
  return std::clamp<std::int64_t>(idx, 0, std::max<std::int64_t>(0, handle.frame_count - 1));
}

FrameImage MediaDecoder::decode_one(const VideoHandle& handle, std::int64_t frame_index) const {
  // Input seeking yields the first frame with pts >= the seek point; aiming
  // half a frame early lands exactly on frame_index.
  const double seek = std::max(0.0, (static_cast<double>(frame_index) - 0.5) / handle.fps);
  std::vector<std::string> argv = {cfg_.ffmpeg, "-v", "error", "-nostdin"};
  argv.insert(argv.end(), cfg_.extra_input_args.begin(), cfg_.extra_input_args.end());
  argv.insert(argv.end(), {"-ss", format_seconds(seek), "-i", handle.path.string(), "-map", "0:v:0",
                           "-frames:v", "1", "-f", "rawvideo", "-pix_fmt", "rgb24", "-"});

  FrameImage frame;
  frame.frame_index = frame_index;
  frame.timestamp_s = static_cast<double>(frame_index) / handle.fps;
  frame.width = handle.width;
  frame.height = handle.height;

  util::RunResult res;
  {
    util::SemaphoreGuard guard(*limiter_);
    res = util::run_capture(argv);
  }
  if (res.exit_code != 0 || res.out.size() != frame.pixel_count() * 3) {
    fail(ErrorCode::DecodeError, handle.path.string() + " frame " + std::to_string(frame_index) + ": got " +
                                     std::to_string(res.out.size()) + " bytes; " + util::tail_excerpt(res.err));
  }
  frame.pixels = std::move(res.out);
  return frame;
}

std::vector<FrameImage> MediaDecoder::frames_at(const VideoHandle& handle,
                                                const std::vector<double>& timestamps) const {
  for (double t : timestamps) {
    if (!(t >= 0.0) || !(t < handle.duration_s)) {
      fail(ErrorCode::TimestampOutOfRange,
           format_seconds(t) + " not in [0, " + format_seconds(handle.duration_s) + ")");
    }
  }
  // Decode each distinct frame once, concurrently; the semaphore bounds the
  // number of live decoder processes.
  std::map<std::int64_t, std::future<FrameImage>> pending;
  for (double t : timestamps) {
    const auto idx = frame_index_at(handle, t);
    if (!pending.contains(idx)) {
      pending.emplace(idx, std::async(std::launch::async, [this, &handle, idx] { return decode_one(handle, idx); }));
    }
  }
  std::map<std::int64_t, FrameImage> decoded;
  std::exception_ptr first_error;
  for (auto& [idx, fut] : pending) {
    try {
      decoded.emplace(idx, fut.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<FrameImage> out;
  out.reserve(timestamps.size());
  for (double t : timestamps) out.push_back(decoded.at(frame_index_at(handle, t)));
  return out;
}

void MediaDecoder::iter_all_frames(const VideoHandle& handle, double stride_s,
                                   const std::function<bool(FrameImage&&)>& on_frame) const {
  if (!(stride_s > 0.0)) fail(ErrorCode::InvalidArgument, "stride_s must be > 0");

  // Target frame indexes for t = k*stride < duration, deduplicated.
  std::vector<std::int64_t> targets;
  for (std::int64_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * stride_s;
    if (t >= handle.duration_s) break;
    const auto idx = frame_index_at(handle, t);
    if (targets.empty() || targets.back() != idx) targets.push_back(idx);
  }
  if (targets.empty()) return;

  std::vector<std::string> argv = {cfg_.ffmpeg, "-v", "error", "-nostdin"};
  argv.insert(argv.end(), cfg_.extra_input_args.begin(), cfg_.extra_input_args.end());
  argv.insert(argv.end(), {"-i", handle.path.string(), "-map", "0:v:0", "-fps_mode", "passthrough", "-f",
                           "rawvideo", "-pix_fmt", "rgb24", "-"});

  util::SemaphoreGuard guard(*limiter_);
  util::Subprocess proc(argv);
  const std::size_t frame_bytes = static_cast<std::size_t>(handle.width) * static_cast<std::size_t>(handle.height) * 3;
  std::vector<std::uint8_t> buf(frame_bytes);
  std::size_t next = 0;
  for (std::int64_t idx = 0; next < targets.size(); ++idx) {
    const std::size_t got = proc.read_stdout(buf);
    if (got != frame_bytes) break;
    if (idx != targets[next]) continue;
    ++next;
    FrameImage frame;
    frame.frame_index = idx;
    frame.timestamp_s = static_cast<double>(idx) / handle.fps;
    frame.width = handle.width;
    frame.height = handle.height;
    frame.pixels = buf;
    if (!on_frame(std::move(frame))) return;  // destructor kills the decoder
  }
  if (next < targets.size()) {
    const int rc = proc.wait();
    if (rc != 0 || next == 0) {
      fail(ErrorCode::DecodeError, handle.path.string() + ": sequential decode ended early; " +
                                       util::tail_excerpt(proc.stderr_text()));
    }
  }
}

std::vector<FrameImage> MediaDecoder::all_frames(const VideoHandle& handle, double stride_s) const {
  std::vector<FrameImage> out;
  iter_all_frames(handle, stride_s, [&](FrameImage&& f) {
    out.push_back(std::move(f));
    return true;
  });
  return out;
}

void MediaDecoder::export_clip(const VideoHandle& handle, const ClipSpec& clip,
                               const std::filesystem::path& out_path) const {
  if (!(clip.start_s >= 0.0) || !(clip.end_s > clip.start_s) || clip.end_s > handle.duration_s + 1e-9) {
    fail(ErrorCode::InvalidArgument, "invalid clip [" + format_seconds(clip.start_s) + ", " +
                                         format_seconds(clip.end_s) + "]");
  }
  std::error_code ec;
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path(), ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + out_path.parent_path().string() + ": " + ec.message());

  std::vector<std::string> argv = {cfg_.ffmpeg, "-v", "error", "-nostdin", "-y"};
  argv.insert(argv.end(), cfg_.extra_input_args.begin(), cfg_.extra_input_args.end());
  argv.insert(argv.end(), {"-ss", format_seconds(clip.start_s), "-i", handle.path.string(), "-t",
                           format_seconds(clip.length()), "-map", "0:v:0"});
  argv.insert(argv.end(), cfg_.clip_codec_args.begin(), cfg_.clip_codec_args.end());
  argv.push_back(out_path.string());

  util::RunResult res;
  {
    util::SemaphoreGuard guard(*limiter_);
    res = util::run_capture(argv);
  }
  if (res.exit_code != 0) {
    fail(ErrorCode::DecodeError, "clip export failed: " + util::tail_excerpt(res.err));
  }
  if (!std::filesystem::is_regular_file(out_path, ec) || std::filesystem::file_size(out_path, ec) == 0) {
    fail(ErrorCode::IoError, "clip export produced no file at " + out_path.string());
  }
}

std::vector<ClipSpec> extract_clips(const VideoHandle& handle, int n_clips, double clip_len_s) {
  if (n_clips < 1) fail(ErrorCode::InvalidArgument, "n_clips must be >= 1");
  if (!(clip_len_s > 0.0)) fail(ErrorCode::InvalidArgument, "clip_len_s must be > 0");
  const double duration = handle.duration_s;
  const double len = std::min(clip_len_s, duration);
  const double segment = duration / n_clips;
  std::vector<ClipSpec> clips;
  clips.reserve(static_cast<std::size_t>(n_clips));
  for (int i = 0; i < n_clips; ++i) {
    const double mid = (i + 0.5) * segment;
    const double start = std::clamp(mid - len / 2.0, 0.0, duration - len);
    clips.push_back({start, start + len});
  }
  return clips;
}

nlohmann::json to_json(const VideoHandle& h) {
  return {{"path", h.path.string()}, {"duration_s", h.duration_s}, {"fps", h.fps},
          {"frame_count", h.frame_count}, {"width", h.width}, {"height", h.height}};
}

namespace fixtures {

const std::vector<std::array<std::uint8_t, 3>>& scene_palette() {
  static const std::vector<std::array<std::uint8_t, 3>> palette = {
      {230, 25, 75}, {60, 180, 75}, {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230},
  };
  return palette;
}

void write_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                 const FramePainter& paint) {
  if (spec.width <= 0 || spec.height <= 0 || !(spec.fps > 0.0) || !(spec.duration_s > 0.0)) {
    fail(ErrorCode::InvalidArgument, "invalid fixture spec");
  }
  std::error_code ec;
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path(), ec);

  const auto frames = std::max<std::int64_t>(1, std::llround(spec.duration_s * spec.fps));
  util::Subprocess proc(
      {cfg.ffmpeg, "-v", "error", "-nostdin", "-y", "-f", "rawvideo", "-pix_fmt", "rgb24", "-s",
       std::to_string(spec.width) + "x" + std::to_string(spec.height), "-r", format_seconds(spec.fps), "-i", "-",
       "-c:v", "ffv1", "-pix_fmt", "bgr0", out.string()},
      /*pipe_stdin=*/true);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(spec.width) * static_cast<std::size_t>(spec.height) * 3);
  bool ok = true;
  for (std::int64_t i = 0; i < frames && ok; ++i) {
    paint(i, static_cast<double>(i) / spec.fps, rgb);
    ok = proc.write_stdin(rgb);
  }
  proc.close_stdin();
  const int rc = proc.wait();
  if (!ok || rc != 0) fail(ErrorCode::IoError, "fixture encode failed: " + util::tail_excerpt(proc.stderr_text()));
}

void write_scene_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                       double scene_len_s) {
  const auto& palette = scene_palette();
  write_video(cfg, out, spec, [&](std::int64_t i, double, std::vector<std::uint8_t>& rgb) {
    // Integer arithmetic on the frame index avoids t = i/fps rounding below a
    // scene boundary.
    const auto frames_per_scene = std::llround(scene_len_s * spec.fps);
    const auto& c = palette[static_cast<std::size_t>((i / frames_per_scene) % static_cast<std::int64_t>(palette.size()))];
    for (std::size_t p = 0; p < rgb.size(); p += 3) {
      rgb[p] = c[0];
      rgb[p + 1] = c[1];
      rgb[p + 2] = c[2];
    }
  });
}

void write_constant_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec) {
  write_video(cfg, out, spec,
              [](std::int64_t, double, std::vector<std::uint8_t>& rgb) { std::fill(rgb.begin(), rgb.end(), 128); });
}

void write_checker_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                         int cell) {
  const int c = std::max(1, cell);
  write_video(cfg, out, spec, [&](std::int64_t i, double, std::vector<std::uint8_t>& rgb) {
    const auto phase = (i / std::max<std::int64_t>(1, std::llround(spec.fps))) % 2;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const bool on = (((x / c) + (y / c) + phase) % 2) == 0;
        const auto v = static_cast<std::uint8_t>(on ? 255 : 0);
        const std::size_t p = (static_cast<std::size_t>(y) * static_cast<std::size_t>(spec.width) + static_cast<std::size_t>(x)) * 3;
        rgb[p] = rgb[p + 1] = rgb[p + 2] = v;
      }
    }
  });
}

void write_png(const std::filesystem::path& out, const FrameImage& frame) {
  util::write_file_bytes(out, util::encode_png_rgb(frame.pixels, frame.width, frame.height));
}

}  // namespace fixtures

}  // namespace qcaption::media
