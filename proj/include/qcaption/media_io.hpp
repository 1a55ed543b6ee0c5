// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qcaption/util/semaphore.hpp"

namespace qcaption::media {

struct VideoHandle {
  std::filesystem::path path;
  double duration_s = 0.0;
  double fps = 0.0;
  std::int64_t frame_count = 0;
  int width = 0;
  int height = 0;
};

/// Decoded 8-bit RGB raster, row-major, `width * height * 3` bytes.
struct FrameImage {
  std::int64_t frame_index = 0;
  double timestamp_s = 0.0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  bool valid() const noexcept { return width > 0 && height > 0 && pixels.size() == pixel_count() * 3; }
};

struct ClipSpec {
  double start_s = 0.0;
  double end_s = 0.0;
  double length() const noexcept { return end_s - start_s; }
  friend bool operator==(const ClipSpec&, const ClipSpec&) = default;
};

/// Decoder subprocess configuration. Defaults resolve `ffmpeg`/`ffprobe`
/// through PATH; `from_env` overrides with QCAPTION_FFMPEG, QCAPTION_FFPROBE,
/// QCAPTION_DECODER_ARGS (whitespace separated, inserted before `-i`) and
/// QCAPTION_DECODER_CONCURRENCY.
struct DecoderConfig {
  std::string ffmpeg = "ffmpeg";
  std::string ffprobe = "ffprobe";
  std::vector<std::string> extra_input_args;
  std::vector<std::string> clip_codec_args = {"-an", "-c:v", "libx264", "-preset", "veryfast",
                                              "-pix_fmt", "yuv420p", "-vf",
                                              "scale=trunc(iw/2)*2:trunc(ih/2)*2"};
  int max_concurrent = 4;

  static DecoderConfig from_env();
  /// Reads the "decoder" object of a config file, then applies env overrides.
  static DecoderConfig from_json(const nlohmann::json& j);
};

/// Frame access over an external ffmpeg-compatible decoder. Copies share one
/// subprocess semaphore, so every copy of a decoder respects the same bound.
class MediaDecoder {
 public:
  explicit MediaDecoder(DecoderConfig cfg = DecoderConfig::from_env());

  const DecoderConfig& config() const noexcept { return cfg_; }

  VideoHandle probe(const std::filesystem::path& path) const;

  /// One frame per timestamp: the last frame whose presentation time is at or
  /// before t. Timestamps must lie in [0, duration_s).
  std::vector<FrameImage> frames_at(const VideoHandle& handle, const std::vector<double>& timestamps) const;

  /// Frames at t = 0, stride, 2*stride, ... < duration_s in one sequential
  /// decode. The callback may return false to stop early.
  void iter_all_frames(const VideoHandle& handle, double stride_s,
                       const std::function<bool(FrameImage&&)>& on_frame) const;
  std::vector<FrameImage> all_frames(const VideoHandle& handle, double stride_s) const;

  /// Frame index that frames_at(t) resolves to.
  static std::int64_t frame_index_at(const VideoHandle& handle, double t);

  void export_clip(const VideoHandle& handle, const ClipSpec& clip, const std::filesystem::path& out_path) const;

  std::size_t peak_concurrency() const { return limiter_->peak(); }

 private:
  FrameImage decode_one(const VideoHandle& handle, std::int64_t frame_index) const;

  DecoderConfig cfg_;
  std::shared_ptr<util::Semaphore> limiter_;
};

/// Splits the video into n equal segments and centers a clip_len_s window on
/// each segment midpoint, clamped into [0, duration_s].
std::vector<ClipSpec> extract_clips(const VideoHandle& handle, int n_clips = 4, double clip_len_s = 5.0);

/// Synthetic test media. Each generator writes a lossless (FFV1/Matroska)
/// video through the configured ffmpeg so decoded pixels are exact.
namespace fixtures {

/// Eight well-separated solid colors, indexed by scene.
const std::vector<std::array<std::uint8_t, 3>>& scene_palette();

struct FixtureSpec {
  int width = 64;
  int height = 48;
  double fps = 10.0;
  double duration_s = 8.0;
};

using FramePainter = std::function<void(std::int64_t frame_index, double t, std::vector<std::uint8_t>& rgb)>;

void write_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                 const FramePainter& paint);

/// Solid color scenes of scene_len_s seconds; frame at t shows palette color
/// floor(t / scene_len_s) mod palette size.
void write_scene_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                       double scene_len_s = 1.0);

/// Every frame identical (mid gray).
void write_constant_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec);

/// Checkerboard with cell size `cell`; phase flips every second.
void write_checker_video(const DecoderConfig& cfg, const std::filesystem::path& out, const FixtureSpec& spec,
                         int cell = 8);

void write_png(const std::filesystem::path& out, const FrameImage& frame);

}  // namespace fixtures

nlohmann::json to_json(const VideoHandle& handle);

}  // namespace qcaption::media
