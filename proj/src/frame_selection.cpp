// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/frame_selection.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

#include "qcaption/error.hpp"

namespace qcaption::frames {
namespace {

// sRGB primaries, D65. The reference white is the image of RGB (1,1,1) under
// the same matrix, which makes white map to L = 100, u = v = 0 exactly.
constexpr double kM[3][3] = {
    {0.4124564, 0.3575761, 0.1804375},
    {0.2126729, 0.7151522, 0.0721750},
    {0.0193339, 0.1191920, 0.9503041},
};

struct WhitePoint {
  double x, y, z, u_prime, v_prime;
};

const WhitePoint& white() {
  static const WhitePoint w = [] {
    WhitePoint p{};
    p.x = kM[0][0] + kM[0][1] + kM[0][2];
    p.y = kM[1][0] + kM[1][1] + kM[1][2];
    p.z = kM[2][0] + kM[2][1] + kM[2][2];
    const double d = p.x + 15.0 * p.y + 3.0 * p.z;
    p.u_prime = 4.0 * p.x / d;
    p.v_prime = 9.0 * p.y / d;
    return p;
  }();
  return w;
}

const std::array<double, 256>& srgb_to_linear() {
  static const std::array<double, 256> lut = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double c = i / 255.0;
      t[static_cast<std::size_t>(i)] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return lut;
}

void pixel_to_luv(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8, double* out) {
  const auto& lin = srgb_to_linear();
  const double r = lin[r8], g = lin[g8], b = lin[b8];
  const double x = kM[0][0] * r + kM[0][1] * g + kM[0][2] * b;
  const double y = kM[1][0] * r + kM[1][1] * g + kM[1][2] * b;
  const double z = kM[2][0] * r + kM[2][1] * g + kM[2][2] * b;
  const auto& w = white();

  const double yr = y / w.y;
  constexpr double kEpsilon = 216.0 / 24389.0;  // (6/29)^3
  constexpr double kKappa = 24389.0 / 27.0;     // (29/3)^3
  const double L = yr > kEpsilon ? 116.0 * std::cbrt(yr) - 16.0 : kKappa * yr;

  const double d = x + 15.0 * y + 3.0 * z;
  if (d <= 0.0) {
    out[0] = out[1] = out[2] = 0.0;
    return;
  }
  const double up = 4.0 * x / d;
  const double vp = 9.0 * y / d;
  out[0] = L;
  out[1] = 13.0 * L * (up - w.u_prime);
  out[2] = 13.0 * L * (vp - w.v_prime);
}

// Portable draws from a 64-bit engine; std distributions are
// implementation-defined and would break cross-library reproducibility.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const std::uint64_t v = rng();
    if (v < limit) return v % bound;
  }
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void sort_unique(KeyframeSet& set) {
  std::stable_sort(set.frames.begin(), set.frames.end(),
                   [](const FrameImage& a, const FrameImage& b) { return a.frame_index < b.frame_index; });
  set.frames.erase(std::unique(set.frames.begin(), set.frames.end(),
                               [](const FrameImage& a, const FrameImage& b) { return a.frame_index == b.frame_index; }),
                   set.frames.end());
}

std::vector<double> timestamps_for(const VideoHandle& handle, const std::vector<std::int64_t>& indexes) {
  std::vector<double> ts;
  ts.reserve(indexes.size());
  for (auto idx : indexes) ts.push_back(static_cast<double>(idx) / handle.fps);
  return ts;
}

void require_n(int n) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "n must be >= 1");
}

}  // namespace

LuvImage rgb_to_luv(const FrameImage& frame) {
  LuvImage out;
  out.width = frame.width;
  out.height = frame.height;
  out.values.resize(frame.pixel_count() * 3);
  for (std::size_t p = 0; p < frame.pixel_count(); ++p) {
    pixel_to_luv(frame.pixels[3 * p], frame.pixels[3 * p + 1], frame.pixels[3 * p + 2], &out.values[3 * p]);
  }
  return out;
}

double frame_difference(const LuvImage& a, const LuvImage& b) {
  if (a.width != b.width || a.height != b.height || a.values.size() != b.values.size()) {
    fail(ErrorCode::DimensionMismatch, std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                                           std::to_string(b.width) + "x" + std::to_string(b.height));
  }
  if (a.values.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) sum += std::abs(a.values[i] - b.values[i]);
  return sum / static_cast<double>(a.values.size());
}

ChannelHistogram image_histogram(const FrameImage& frame, int bins) {
  if (bins < 2) fail(ErrorCode::InvalidArgument, "bins must be >= 2");
  ChannelHistogram h;
  h.bins_per_channel = bins;
  h.values.assign(static_cast<std::size_t>(3 * bins), 0.0);
  const std::size_t n = frame.pixel_count();
  std::vector<std::uint64_t> counts(h.values.size(), 0);
  for (std::size_t p = 0; p < n; ++p) {
    for (int c = 0; c < 3; ++c) {
      const int bin = frame.pixels[3 * p + static_cast<std::size_t>(c)] * bins / 256;
      ++counts[static_cast<std::size_t>(c * bins + bin)];
    }
  }
  if (n == 0) return h;
  for (std::size_t i = 0; i < counts.size(); ++i) h.values[i] = static_cast<double>(counts[i]) / static_cast<double>(n);
  return h;
}

double laplacian_variance(const FrameImage& frame) {
  const int w = frame.width, h = frame.height;
  if (w <= 0 || h <= 0) return 0.0;
  std::vector<double> gray(frame.pixel_count());
  for (std::size_t p = 0; p < gray.size(); ++p) {
    gray[p] = 0.299 * frame.pixels[3 * p] + 0.587 * frame.pixels[3 * p + 1] + 0.114 * frame.pixels[3 * p + 2];
  }
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return gray[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
  };
  std::vector<double> response(gray.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      response[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] =
          at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
    }
  }
  const double mean = std::accumulate(response.begin(), response.end(), 0.0) / static_cast<double>(response.size());
  double var = 0.0;
  for (double r : response) var += (r - mean) * (r - mean);
  return var / static_cast<double>(response.size());
}

FrameImage downscale_nearest(const FrameImage& frame, int max_dim) {
  const int longest = std::max(frame.width, frame.height);
  if (longest <= max_dim || max_dim <= 0) return frame;
  const int nw = std::max(1, static_cast<int>(static_cast<long long>(frame.width) * max_dim / longest));
  const int nh = std::max(1, static_cast<int>(static_cast<long long>(frame.height) * max_dim / longest));
  FrameImage out;
  out.frame_index = frame.frame_index;
  out.timestamp_s = frame.timestamp_s;
  out.width = nw;
  out.height = nh;
  out.pixels.resize(static_cast<std::size_t>(nw) * static_cast<std::size_t>(nh) * 3);
  for (int y = 0; y < nh; ++y) {
    const int sy = std::min(frame.height - 1, static_cast<int>((y + 0.5) * frame.height / nh));
    for (int x = 0; x < nw; ++x) {
      const int sx = std::min(frame.width - 1, static_cast<int>((x + 0.5) * frame.width / nw));
      const std::size_t src = (static_cast<std::size_t>(sy) * static_cast<std::size_t>(frame.width) + static_cast<std::size_t>(sx)) * 3;
      const std::size_t dst = (static_cast<std::size_t>(y) * static_cast<std::size_t>(nw) + static_cast<std::size_t>(x)) * 3;
      std::copy_n(frame.pixels.begin() + static_cast<std::ptrdiff_t>(src), 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }
  return out;
}

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int max_iter,
                    double tol) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  if (points.size() < static_cast<std::size_t>(k)) {
    fail(ErrorCode::TooFewPoints, std::to_string(points.size()) + " points for k=" + std::to_string(k));
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) fail(ErrorCode::DimensionMismatch, "k-means points differ in dimension");
  }
  const std::size_t n = points.size();
  const auto ku = static_cast<std::size_t>(k);
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  KMeansResult res;
  res.centroids.push_back(points[uniform_below(rng, n)]);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points[i], res.centroids[0]);
  while (res.centroids.size() < ku) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = uniform_below(rng, n);
    }
    res.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points[i], res.centroids.back()));
  }

  res.assignments.assign(n, 0);
  for (int iter = 0; iter < std::max(1, max_iter); ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points[i], res.centroids[0]);
      for (std::size_t c = 1; c < ku; ++c) {
        const double d = sq_dist(points[i], res.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      res.assignments[i] = best;
    }

    std::vector<std::size_t> sizes(ku, 0);
    for (int a : res.assignments) ++sizes[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < ku; ++c) {
      if (sizes[c] != 0) continue;
      // Re-seed the empty cluster with the point farthest from its centroid,
      // taken from a cluster that can spare it.
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto owner = static_cast<std::size_t>(res.assignments[i]);
        if (sizes[owner] < 2) continue;
        const double d = sq_dist(points[i], res.centroids[owner]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) continue;
      --sizes[static_cast<std::size_t>(res.assignments[far])];
      res.assignments[far] = static_cast<int>(c);
      sizes[c] = 1;
      res.centroids[c] = points[far];
    }

    std::vector<std::vector<double>> next(ku, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto& acc = next[static_cast<std::size_t>(res.assignments[i])];
      for (std::size_t d = 0; d < dim; ++d) acc[d] += points[i][d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < ku; ++c) {
      if (sizes[c] == 0) {
        next[c] = res.centroids[c];
      } else {
        for (auto& v : next[c]) v /= static_cast<double>(sizes[c]);
      }
      shift = std::max(shift, std::sqrt(sq_dist(next[c], res.centroids[c])));
    }
    res.centroids = std::move(next);

    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(points[i], res.centroids[static_cast<std::size_t>(res.assignments[i])]);
    res.inertia_trace.push_back(inertia);
    res.iterations = iter + 1;
    if (shift < tol) break;
  }
  return res;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Katna: return "katna";
    case Strategy::Regular: return "regular";
    case Strategy::Random: return "random";
    case Strategy::FirstN: return "first_n";
    case Strategy::Single: return "single";
    case Strategy::Clips: return "clips";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  if (name == "katna") return Strategy::Katna;
  if (name == "regular") return Strategy::Regular;
  if (name == "random") return Strategy::Random;
  if (name == "first_n" || name == "first-n") return Strategy::FirstN;
  if (name == "single") return Strategy::Single;
  if (name == "clips" || name == "multiclips") return Strategy::Clips;
  fail(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(name) + "'");
}

std::vector<double> regular_timestamps(double duration_s, int n) {
  require_n(n);
  std::vector<double> ts;
  ts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ts.push_back((i + 0.5) * duration_s / n);
  return ts;
}

KeyframeSet regular_sample(const MediaDecoder& decoder, const VideoHandle& handle, int n) {
  KeyframeSet set;
  set.strategy = Strategy::Regular;
  set.params.n = n;
  set.frames = decoder.frames_at(handle, regular_timestamps(handle.duration_s, n));
  sort_unique(set);
  return set;
}

KeyframeSet single_frame(const MediaDecoder& decoder, const VideoHandle& handle) {
  KeyframeSet set = regular_sample(decoder, handle, 1);
  set.strategy = Strategy::Single;
  return set;
}

std::vector<std::int64_t> random_frame_indexes(std::int64_t frame_count, int n, std::uint64_t seed) {
  require_n(n);
  std::vector<std::int64_t> out;
  if (frame_count <= n) {
    out.resize(static_cast<std::size_t>(std::max<std::int64_t>(0, frame_count)));
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  // Floyd's algorithm: n distinct draws from [0, frame_count).
  std::mt19937_64 rng(seed);
  std::set<std::int64_t> chosen;
  for (std::int64_t j = frame_count - n; j < frame_count; ++j) {
    const auto t = static_cast<std::int64_t>(uniform_below(rng, static_cast<std::uint64_t>(j) + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

KeyframeSet random_sample(const MediaDecoder& decoder, const VideoHandle& handle, int n, std::uint64_t seed) {
  KeyframeSet set;
  set.strategy = Strategy::Random;
  set.params.n = n;
  set.params.seed = seed;
  set.frames = decoder.frames_at(handle, timestamps_for(handle, random_frame_indexes(handle.frame_count, n, seed)));
  sort_unique(set);
  return set;
}

KeyframeSet first_n(const MediaDecoder& decoder, const VideoHandle& handle, int n, double stride_s) {
  require_n(n);
  if (!(stride_s > 0.0)) fail(ErrorCode::InvalidArgument, "stride_s must be > 0");
  std::vector<double> ts;
  for (int k = 0; k < n; ++k) {
    const double t = k * stride_s;
    if (t >= handle.duration_s) break;
    ts.push_back(t);
  }
  KeyframeSet set;
  set.strategy = Strategy::FirstN;
  set.params.n = n;
  set.params.stride_s = stride_s;
  set.frames = decoder.frames_at(handle, ts);
  sort_unique(set);
  return set;
}

KeyframeSet katna_keyframes(const MediaDecoder& decoder, const VideoHandle& handle, const KatnaOptions& opts) {
  require_n(opts.n);
  const double stride = opts.stride_s > 0.0 ? opts.stride_s : 1.0 / std::min(handle.fps, 10.0);

  struct Candidate {
    CandidateTrace trace;
    FrameImage small;
  };
  std::vector<Candidate> candidates;
  LuvImage last_kept;
  decoder.iter_all_frames(handle, stride, [&](FrameImage&& frame) {
    FrameImage small = downscale_nearest(frame, opts.max_dim);
    LuvImage luv = rgb_to_luv(small);
    double diff = 0.0;
    if (!candidates.empty()) {
      diff = frame_difference(luv, last_kept);
      if (diff < opts.diff_threshold) return true;
    }
    Candidate c;
    c.trace.frame_index = small.frame_index;
    c.trace.timestamp_s = small.timestamp_s;
    c.trace.difference = diff;
    c.trace.sharpness = laplacian_variance(small);
    c.small = std::move(small);
    candidates.push_back(std::move(c));
    last_kept = std::move(luv);
    return true;
  });

  KeyframeSet set;
  set.strategy = Strategy::Katna;
  set.params.n = opts.n;
  set.params.seed = opts.seed;
  set.params.stride_s = stride;
  set.params.diff_threshold = opts.diff_threshold;
  set.params.bins = opts.bins;

  std::vector<std::int64_t> picked;
  if (!candidates.empty()) {
    std::vector<std::vector<double>> features;
    features.reserve(candidates.size());
    for (const auto& c : candidates) features.push_back(image_histogram(c.small, opts.bins).values);
    const int k = std::min<int>(opts.n, static_cast<int>(candidates.size()));
    const KMeansResult km = kmeans(features, k, opts.seed);

    std::vector<int> best(static_cast<std::size_t>(k), -1);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      auto& t = candidates[i].trace;
      t.cluster = km.assignments[i];
      int& b = best[static_cast<std::size_t>(t.cluster)];
      // Strict comparison keeps the earliest frame on ties.
      if (b < 0 || t.sharpness > candidates[static_cast<std::size_t>(b)].trace.sharpness) b = static_cast<int>(i);
    }
    for (int b : best) {
      if (b < 0) continue;
      candidates[static_cast<std::size_t>(b)].trace.selected = true;
      picked.push_back(candidates[static_cast<std::size_t>(b)].trace.frame_index);
    }
  }

  // Too few distinct candidates: fill from regular sampling, first covering
  // segments that have no keyframe yet, then any remaining positions.
  if (static_cast<int>(picked.size()) < opts.n) {
    const auto regular = regular_timestamps(handle.duration_s, opts.n);
    const double segment = handle.duration_s / opts.n;
    std::unordered_set<std::int64_t> have(picked.begin(), picked.end());
    auto covered = [&](int seg) {
      for (auto idx : picked) {
        const double t = static_cast<double>(idx) / handle.fps;
        if (t >= seg * segment && t < (seg + 1) * segment) return true;
      }
      return false;
    };
    std::vector<bool> seg_covered(static_cast<std::size_t>(opts.n));
    for (int s = 0; s < opts.n; ++s) seg_covered[static_cast<std::size_t>(s)] = covered(s);
    for (int pass = 0; pass < 2 && static_cast<int>(picked.size()) < opts.n; ++pass) {
      for (int s = 0; s < opts.n && static_cast<int>(picked.size()) < opts.n; ++s) {
        if (pass == 0 && seg_covered[static_cast<std::size_t>(s)]) continue;
        const auto idx = MediaDecoder::frame_index_at(handle, regular[static_cast<std::size_t>(s)]);
        if (have.insert(idx).second) {
          picked.push_back(idx);
          set.fallback_frames.push_back(idx);
        }
      }
    }
  }

  std::sort(picked.begin(), picked.end());
  set.frames = decoder.frames_at(handle, timestamps_for(handle, picked));
  sort_unique(set);
  for (const auto& f : set.frames) set.sharpness.emplace_back(laplacian_variance(downscale_nearest(f, opts.max_dim)));
  std::sort(set.fallback_frames.begin(), set.fallback_frames.end());
  for (auto& c : candidates) set.candidates.push_back(c.trace);
  return set;
}

KeyframeSet select_frames(const MediaDecoder& decoder, const VideoHandle& handle, const SelectRequest& req) {
  switch (req.strategy) {
    case Strategy::Katna: {
      KatnaOptions opts;
      opts.n = req.n;
      opts.seed = req.seed;
      opts.diff_threshold = req.diff_threshold;
      opts.bins = req.bins;
      return katna_keyframes(decoder, handle, opts);
    }
    case Strategy::Regular: return regular_sample(decoder, handle, req.n);
    case Strategy::Random: return random_sample(decoder, handle, req.n, req.seed);
    case Strategy::FirstN: return first_n(decoder, handle, req.n, req.first_n_stride_s);
    case Strategy::Single: return single_frame(decoder, handle);
    case Strategy::Clips: break;
  }
  fail(ErrorCode::InvalidArgument, "clips is not a frame selection strategy");
}

nlohmann::json selection_report(const KeyframeSet& set) {
  nlohmann::json params = {{"n", set.params.n}};
  if (set.params.seed) params["seed"] = *set.params.seed;
  if (set.params.stride_s > 0.0) params["stride_s"] = set.params.stride_s;
  if (set.strategy == Strategy::Katna) {
    params["diff_threshold"] = set.params.diff_threshold;
    params["bins"] = set.params.bins;
  }
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t k = 0; k < set.frames.size(); ++k) {
    nlohmann::json f = {{"k", k}, {"frame_index", set.frames[k].frame_index},
                        {"timestamp_s", set.frames[k].timestamp_s}};
    if (k < set.sharpness.size() && set.sharpness[k]) f["sharpness"] = *set.sharpness[k];
    frames.push_back(std::move(f));
  }
  nlohmann::json report = {{"strategy", to_string(set.strategy)}, {"params", params}, {"frames", frames}};
  if (set.strategy == Strategy::Katna) {
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : set.candidates) {
      cands.push_back({{"frame_index", c.frame_index}, {"timestamp_s", c.timestamp_s}, {"difference", c.difference},
                       {"cluster", c.cluster}, {"sharpness", c.sharpness}, {"selected", c.selected}});
    }
    report["candidates"] = std::move(cands);
    report["fallback_frames"] = set.fallback_frames;
  }
  return report;
}

}  // namespace qcaption::frames
