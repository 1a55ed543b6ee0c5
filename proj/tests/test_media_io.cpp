// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <thread>

#include "qcaption/error.hpp"
#include "qcaption/util/codec.hpp"
#include "support/test_support.hpp"

using namespace qcaption;
using namespace qcaption::media;
using qcaption::testing::decoder;
using qcaption::testing::Fixture;
using qcaption::testing::fixture;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected qcaption::Error");
  return ErrorCode::ConfigError;
}

std::array<std::uint8_t, 3> first_pixel(const FrameImage& f) { return {f.pixels[0], f.pixels[1], f.pixels[2]}; }

}  // namespace

TEST_CASE("probe reports the parameters the fixture was generated with") {
  const auto h = decoder().probe(fixture(Fixture::Scenes8s));
  CHECK(h.duration_s == doctest::Approx(8.0));
  CHECK(h.fps == doctest::Approx(10.0));
  CHECK(h.frame_count == 80);
  CHECK(h.width == 64);
  CHECK(h.height == 48);
  CHECK(std::abs(static_cast<double>(h.frame_count) - h.duration_s * h.fps) <= h.fps);
}

TEST_CASE("probe error paths") {
  const auto dir = qcaption::testing::fresh_dir("probe_errors");
  CHECK(code_of([&] { decoder().probe(dir / "missing.mp4"); }) == ErrorCode::FileNotFound);

  const auto empty = dir / "empty.mp4";
  util::write_file_text(empty, "");
  CHECK(code_of([&] { decoder().probe(empty); }) == ErrorCode::DecodeError);

  const auto junk = dir / "junk.mp4";
  util::write_file_text(junk, "this is not a video container at all");
  try {
    decoder().probe(junk);
    FAIL("expected DecodeError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DecodeError);
    // carries the decoder's own diagnostics
    CHECK(std::string(e.what()).size() > std::string("DecodeError: ").size() + junk.string().size());
  }
}

TEST_CASE("a still image probes as a single frame") {
  const auto dir = qcaption::testing::fresh_dir("still");
  FrameImage img;
  img.width = 16;
  img.height = 8;
  img.pixels.assign(16 * 8 * 3, 200);
  fixtures::write_png(dir / "still.png", img);
  const auto h = decoder().probe(dir / "still.png");
  CHECK(h.frame_count == 1);
  CHECK(h.width == 16);
  CHECK(h.duration_s > 0.0);
  const auto frames = decoder().frames_at(h, {0.0});
  REQUIRE(frames.size() == 1);
  CHECK(frames[0].pixels == img.pixels);
}

TEST_CASE("frames_at returns the frame at or before each timestamp") {
  const auto h = decoder().probe(fixture(Fixture::Scenes8s));
  const auto& palette = fixtures::scene_palette();

  const auto frames = decoder().frames_at(h, {0.5, 3.5});
  REQUIRE(frames.size() == 2);
  CHECK(first_pixel(frames[0]) == palette[0]);
  CHECK(first_pixel(frames[1]) == palette[3]);
  CHECK(frames[0].frame_index == 5);
  CHECK(frames[1].frame_index == 35);

  SUBCASE("order follows the input, not time") {
    const auto rev = decoder().frames_at(h, {6.2, 1.0, 6.25});
    REQUIRE(rev.size() == 3);
    CHECK(first_pixel(rev[0]) == palette[6]);
    CHECK(first_pixel(rev[1]) == palette[1]);
    CHECK(rev[0].frame_index == 62);
    CHECK(rev[2].frame_index == 62);  // 6.25 rounds down to frame 62
  }
  SUBCASE("last frame is reachable") {
    const auto last = decoder().frames_at(h, {7.99});
    CHECK(last[0].frame_index == 79);
    CHECK(first_pixel(last[0]) == palette[7]);
  }
  SUBCASE("dimensions match the handle") {
    for (const auto& f : frames) {
      CHECK(f.width == h.width);
      CHECK(f.height == h.height);
      CHECK(f.valid());
    }
  }
}

TEST_CASE("frames_at edge cases") {
  const auto h = decoder().probe(fixture(Fixture::Scenes8s));
  CHECK(decoder().frames_at(h, {}).empty());
  CHECK(code_of([&] { decoder().frames_at(h, {8.0}); }) == ErrorCode::TimestampOutOfRange);
  CHECK(code_of([&] { decoder().frames_at(h, {-0.1}); }) == ErrorCode::TimestampOutOfRange);
}

TEST_CASE("frames_at is idempotent") {
  const auto h = decoder().probe(fixture(Fixture::Checker8s));
  const auto a = decoder().frames_at(h, {1.3, 4.7});
  const auto b = decoder().frames_at(h, {1.3, 4.7});
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels == b[i].pixels);
}

TEST_CASE("iter_all_frames walks the stride grid") {
  const auto h = decoder().probe(fixture(Fixture::Scenes8s));
  const auto frames = decoder().all_frames(h, 1.0);
  REQUIRE(frames.size() == 8);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    CHECK(frames[i].timestamp_s == doctest::Approx(static_cast<double>(i)));
    CHECK(first_pixel(frames[i]) == fixtures::scene_palette()[i]);
  }
  CHECK(decoder().all_frames(h, 100.0).size() == 1);
  CHECK(code_of([&] { decoder().all_frames(h, 0.0); }) == ErrorCode::InvalidArgument);

  SUBCASE("timestamps strictly increase for arbitrary strides") {
    for (double stride : {0.03, 0.1, 0.25, 0.7, 2.5}) {
      const auto fs = decoder().all_frames(h, stride);
      REQUIRE(!fs.empty());
      for (std::size_t i = 1; i < fs.size(); ++i) CHECK(fs[i].timestamp_s > fs[i - 1].timestamp_s);
    }
  }
  SUBCASE("early stop") {
    int seen = 0;
    decoder().iter_all_frames(h, 0.1, [&](FrameImage&&) { return ++seen < 3; });
    CHECK(seen == 3);
  }
}

TEST_CASE("extract_clips centers clips on segment midpoints") {
  VideoHandle h;
  h.duration_s = 60.0;
  const auto clips = extract_clips(h);
  REQUIRE(clips.size() == 4);
  CHECK(clips[0] == ClipSpec{5, 10});
  CHECK(clips[1] == ClipSpec{20, 25});
  CHECK(clips[2] == ClipSpec{35, 40});
  CHECK(clips[3] == ClipSpec{50, 55});

  h.duration_s = 4.0;
  for (const auto& c : extract_clips(h)) CHECK(c == ClipSpec{0, 4});

  // midpoints 1.5, 4.5, 7.5, 10.5 -> centered +/-2.5 then clamped
  h.duration_s = 12.0;
  const auto twelve = extract_clips(h);
  CHECK(twelve[0] == ClipSpec{0, 5});
  CHECK(twelve[1] == ClipSpec{2, 7});
  CHECK(twelve[2] == ClipSpec{5, 10});
  CHECK(twelve[3] == ClipSpec{7, 12});

  CHECK(code_of([&] { extract_clips(h, 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { extract_clips(h, 4, 0.0); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("extract_clips invariants over many durations") {
  for (double d = 0.5; d < 200.0; d *= 1.37) {
    for (int n : {1, 2, 4, 7}) {
      VideoHandle h;
      h.duration_s = d;
      const auto clips = extract_clips(h, n, 5.0);
      REQUIRE(clips.size() == static_cast<std::size_t>(n));
      for (std::size_t i = 0; i < clips.size(); ++i) {
        CHECK(clips[i].start_s >= 0.0);
        CHECK(clips[i].end_s <= d + 1e-12);
        CHECK(clips[i].length() == doctest::Approx(std::min(5.0, d)));
        if (i > 0) CHECK(clips[i].start_s >= clips[i - 1].start_s);
      }
    }
  }
}

TEST_CASE("export_clip writes a standalone clip of the requested length") {
  const auto h = decoder().probe(fixture(Fixture::TwelveSec));
  const auto dir = qcaption::testing::fresh_dir("clips");
  const ClipSpec clip{2.0, 7.0};
  decoder().export_clip(h, clip, dir / "clip.mp4");
  const auto c = decoder().probe(dir / "clip.mp4");
  CHECK(std::abs(c.duration_s - clip.length()) <= 1.0 / h.fps + 1e-6);

  CHECK(code_of([&] { decoder().export_clip(h, {5.0, 4.0}, dir / "bad.mp4"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("decoder subprocesses respect the concurrency bound") {
  DecoderConfig cfg = qcaption::testing::decoder_config();
  cfg.max_concurrent = 2;
  const MediaDecoder dec(cfg);
  const auto h = dec.probe(fixture(Fixture::Scenes8s));
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) {
    threads.emplace_back([&, i] { dec.frames_at(h, {0.1 * i, 1.0 + i, 2.5 + i, 3.3}); });
  }
  for (auto& t : threads) t.join();
  CHECK(dec.peak_concurrency() <= 2);
  CHECK(dec.peak_concurrency() >= 1);
}

TEST_CASE("a missing decoder binary surfaces as FileNotFound") {
  DecoderConfig cfg;
  cfg.ffprobe = "/nonexistent/ffprobe";
  const MediaDecoder dec(cfg);
  CHECK(code_of([&] { dec.probe(fixture(Fixture::Scenes8s)); }) == ErrorCode::FileNotFound);
}
