// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "qcaption/media_io.hpp"

namespace qcaption::frames {

using media::FrameImage;
using media::MediaDecoder;
using media::VideoHandle;

// ---------------------------------------------------------------------------
// Image primitives
// ---------------------------------------------------------------------------

/// CIE L*u*v* raster (D65, sRGB primaries), interleaved L,u,v per pixel.
struct LuvImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

/// Per-channel (R, G, B) histograms, each normalized to sum to 1.
struct ChannelHistogram {
  int bins_per_channel = 16;
  std::vector<double> values;  // 3 * bins_per_channel, channel-major

  /// Flattened feature vector for clustering.
  const std::vector<double>& features() const noexcept { return values; }
};

LuvImage rgb_to_luv(const FrameImage& frame);

/// Mean absolute difference over every pixel and channel.
double frame_difference(const LuvImage& a, const LuvImage& b);

ChannelHistogram image_histogram(const FrameImage& frame, int bins = 16);

/// Variance of the 4-neighbour Laplacian response of the ITU-R 601 luma
/// image, edges replicated.
double laplacian_variance(const FrameImage& frame);

/// Nearest-neighbour downscale so max(width, height) <= max_dim. Frames that
/// already fit are returned unchanged.
FrameImage downscale_nearest(const FrameImage& frame, int max_dim = 256);

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansResult {
  std::vector<int> assignments;
  std::vector<std::vector<double>> centroids;
  /// Within-cluster sum of squares after each Lloyd iteration.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Deterministic for a fixed seed.
/// A cluster that empties is re-seeded with the point farthest from its
/// current centroid.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed,
                    int max_iter = 100, double tol = 1e-6);

// ---------------------------------------------------------------------------
// Selection strategies
// ---------------------------------------------------------------------------

enum class Strategy { Katna, Regular, Random, FirstN, Single, Clips };

std::string_view to_string(Strategy s);
/// Accepts "katna", "regular", "random", "first_n"/"first-n", "single",
/// "clips"/"multiclips". Throws InvalidArgument otherwise.
Strategy strategy_from_string(std::string_view name);

struct SelectionParams {
  int n = 8;
  std::optional<std::uint64_t> seed;
  double stride_s = 0.0;        // first_n spacing or katna scan stride
  double diff_threshold = 0.0;  // katna only
  int bins = 0;                 // katna only
};

/// One scanned candidate in a Katna run.
struct CandidateTrace {
  std::int64_t frame_index = 0;
  double timestamp_s = 0.0;
  double difference = 0.0;  // LUV difference to the previous kept candidate
  int cluster = -1;
  double sharpness = 0.0;
  bool selected = false;
};

struct KeyframeSet {
  std::vector<FrameImage> frames;  // ascending timestamp, unique frame_index
  Strategy strategy = Strategy::Regular;
  SelectionParams params;
  /// Laplacian variance per selected frame (Katna only; empty otherwise).
  std::vector<std::optional<double>> sharpness;
  /// Per-candidate trace for Katna runs.
  std::vector<CandidateTrace> candidates;
  /// Frames added by the regular-sampling fallback (Katna only).
  std::vector<std::int64_t> fallback_frames;
};

struct KatnaOptions {
  int n = 8;
  double diff_threshold = 5.0;
  int bins = 16;
  std::uint64_t seed = 0;
  /// Scan stride in seconds; 0 means one frame at min(fps, 10) per second.
  double stride_s = 0.0;
  int max_dim = 256;
};

KeyframeSet katna_keyframes(const MediaDecoder& decoder, const VideoHandle& handle, const KatnaOptions& opts);
KeyframeSet regular_sample(const MediaDecoder& decoder, const VideoHandle& handle, int n = 8);
KeyframeSet random_sample(const MediaDecoder& decoder, const VideoHandle& handle, int n, std::uint64_t seed);
KeyframeSet first_n(const MediaDecoder& decoder, const VideoHandle& handle, int n = 8, double stride_s = 1.0);
KeyframeSet single_frame(const MediaDecoder& decoder, const VideoHandle& handle);

/// Midpoint timestamps used by regular_sample.
std::vector<double> regular_timestamps(double duration_s, int n);

/// Frame indexes random_sample picks (sorted, distinct); exposed so the
/// sampling distribution is testable without decoding.
std::vector<std::int64_t> random_frame_indexes(std::int64_t frame_count, int n, std::uint64_t seed);

struct SelectRequest {
  Strategy strategy = Strategy::Regular;
  int n = 8;
  std::uint64_t seed = 0;
  double first_n_stride_s = 1.0;
  double diff_threshold = 5.0;
  int bins = 16;
};

/// Dispatches to the strategy (Clips is not a frame strategy and is rejected).
KeyframeSet select_frames(const MediaDecoder& decoder, const VideoHandle& handle, const SelectRequest& req);

/// Selection report (no pixel data).
nlohmann::json selection_report(const KeyframeSet& set);

}  // namespace qcaption::frames
