// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the test binaries: scratch directories and lazily
// generated synthetic videos.

#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>

#include "qcaption/media_io.hpp"

namespace qcaption::testing {

inline std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    auto base = std::filesystem::temp_directory_path() /
                ("qcaption-test-" + std::to_string(::getpid()));
    std::filesystem::create_directories(base);
    return base;
  }();
  return dir;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = scratch_dir() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline const media::DecoderConfig& decoder_config() {
  static const media::DecoderConfig cfg = media::DecoderConfig::from_env();
  return cfg;
}

inline const media::MediaDecoder& decoder() {
  static const media::MediaDecoder dec(decoder_config());
  return dec;
}

enum class Fixture {
  Scenes8s,      // 8 one-second solid color scenes, 10 fps, 64x48
  Constant8s,    // identical gray frames, 10 fps
  Long80s,       // 80 s of scenes at 10 fps
  Short05s,      // 0.5 s at 10 fps (5 frames)
  ThreeSec,      // 3 s scenes
  Sixty,         // 60 s at 2 fps
  FourSec,       // 4 s at 10 fps
  TwelveSec,     // 12 s at 10 fps
  Checker8s,     // checkerboard
};

inline std::filesystem::path fixture(Fixture which) {
  static std::mutex mu;
  static std::map<Fixture, std::filesystem::path> made;
  std::lock_guard lock(mu);
  if (auto it = made.find(which); it != made.end()) return it->second;

  const auto dir = scratch_dir() / "fixtures";
  std::filesystem::create_directories(dir);
  media::fixtures::FixtureSpec spec;
  std::filesystem::path path;
  const auto& cfg = decoder_config();
  switch (which) {
    case Fixture::Scenes8s:
      path = dir / "scenes8.mkv";
      media::fixtures::write_scene_video(cfg, path, spec);
      break;
    case Fixture::Constant8s:
      path = dir / "constant8.mkv";
      media::fixtures::write_constant_video(cfg, path, spec);
      break;
    case Fixture::Long80s:
      path = dir / "long80.mkv";
      spec.width = 32;
      spec.height = 24;
      spec.duration_s = 80.0;
      media::fixtures::write_scene_video(cfg, path, spec, 10.0);
      break;
    case Fixture::Short05s:
      path = dir / "short05.mkv";
      spec.duration_s = 0.5;
      media::fixtures::write_scene_video(cfg, path, spec, 0.1);
      break;
    case Fixture::ThreeSec:
      path = dir / "three.mkv";
      spec.duration_s = 3.0;
      media::fixtures::write_scene_video(cfg, path, spec);
      break;
    case Fixture::Sixty:
      path = dir / "sixty.mkv";
      spec.width = 32;
      spec.height = 24;
      spec.fps = 2.0;
      spec.duration_s = 60.0;
      media::fixtures::write_scene_video(cfg, path, spec, 7.5);
      break;
    case Fixture::FourSec:
      path = dir / "four.mkv";
      spec.duration_s = 4.0;
      media::fixtures::write_scene_video(cfg, path, spec);
      break;
    case Fixture::TwelveSec:
      path = dir / "twelve.mkv";
      spec.duration_s = 12.0;
      media::fixtures::write_scene_video(cfg, path, spec);
      break;
    case Fixture::Checker8s:
      path = dir / "checker8.mkv";
      media::fixtures::write_checker_video(cfg, path, spec);
      break;
  }
  made.emplace(which, path);
  return path;
}

}  // namespace qcaption::testing
