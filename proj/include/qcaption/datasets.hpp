// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

// Benchmark manifests: one JSONL line per task.
//   caption: {"video_id": str, "video_path": str, "references": [str, ...]}
//   qa:      {"video_id": str, "video_path": str, "question": str, "answer": str}

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace qcaption::data {

enum class ManifestKind { Caption, Qa };

std::string_view to_string(ManifestKind k);
ManifestKind manifest_kind_from_string(std::string_view s);

struct Task {
  std::string video_id;
  std::string video_path;               // as written in the manifest
  std::vector<std::string> references;  // caption only
  std::string question;                 // qa only
  std::string answer;                   // qa only
  bool video_missing = false;           // lenient loads only; never serialized

  /// Uniqueness key: video_id for captions, (video_id, question) for qa.
  std::string key(ManifestKind kind) const;

  friend bool operator==(const Task& a, const Task& b) {
    return a.video_id == b.video_id && a.video_path == b.video_path && a.references == b.references &&
           a.question == b.question && a.answer == b.answer;
  }
};

struct Violation {
  std::size_t line = 0;  // 1-based; 0 when not tied to a manifest line
  std::string field;
  std::string message;
};

struct Manifest {
  ManifestKind kind = ManifestKind::Caption;
  std::vector<Task> tasks;
  std::string source;
  /// Relative video paths resolve against this directory.
  std::filesystem::path base_dir;
  std::vector<Violation> violations;

  std::filesystem::path resolve(const Task& t) const;
  std::size_t missing_videos() const;
};

/// Strict loads throw on the first problem (SchemaError, DuplicateKey,
/// MissingVideo). Lenient loads skip malformed or duplicate lines, keep tasks
/// whose video is missing (flagged), and record everything in `violations`.
Manifest load_manifest(const std::filesystem::path& path, ManifestKind kind, bool strict = true);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
std::string manifest_line(const Task& t, ManifestKind kind);

struct ConvertOptions {
  bool strict = false;
  std::string subset;  // YouCook2 only: keep videos whose "subset" matches; empty keeps all
};

/// {"database": {id: {"subset": .., "annotations": [{"id", "segment": [s, e], "sentence"}]}}}
/// One task per video; the reference is the video's sentences in segment
/// order joined into a single paragraph. Videos without segments are dropped.
Manifest convert_youcook2(const std::filesystem::path& annotation_file, const std::filesystem::path& video_dir,
                          const ConvertOptions& opts = {});

/// {"videos": [{"video_id"}], "sentences": [{"video_id", "caption", "sen_id"}]}
/// Every non-empty caption becomes a reference; duplicates are kept.
Manifest convert_msrvtt(const std::filesystem::path& annotation_file, const std::filesystem::path& video_dir,
                        const ConvertOptions& opts = {});

/// Questions [{"video_name", "question_id", "question"}] joined with answers
/// [{"question_id", "answer"}] by question_id.
Manifest convert_activitynet_qa(const std::filesystem::path& question_file, const std::filesystem::path& answer_file,
                                const std::filesystem::path& video_dir, const ConvertOptions& opts = {});

/// Orders "v_x_2" before "v_x_10".
bool natural_less(std::string_view a, std::string_view b);

}  // namespace qcaption::data
