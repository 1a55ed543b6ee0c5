// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace qcaption {

enum class ErrorCode {
  // media_io
  FileNotFound,
  DecodeError,
  TimestampOutOfRange,
  IoError,
  // shared precondition failures
  InvalidArgument,
  DimensionMismatch,
  TooFewPoints,
  // model backends
  Timeout,
  HttpError,
  MalformedResponse,
  RateLimited,
  UnsupportedByServer,
  ContextTooLong,
  ScriptExhausted,
  // pipeline
  AllFramesFailed,
  TemplateError,
  // evaluation
  EmptyCorpus,
  JudgeUnparseable,
  // datasets
  SchemaError,
  DuplicateKey,
  MissingVideo,
  UnmatchedQuestionId,
  // harness
  MissingBaseline,
  ConfigError,
};

std::string_view to_string(ErrorCode code);

/// Inverse of to_string; nullopt for unknown names.
std::optional<ErrorCode> error_code_from_string(std::string_view name);

/// The single exception type thrown by the library. Errors raised while
/// working on a particular video/frame carry that origin so callers (the
/// harness, the service) can attribute failures to a row instead of aborting.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  const std::optional<std::string>& video_id() const noexcept { return video_id_; }
  const std::optional<std::int64_t>& frame_index() const noexcept { return frame_index_; }

  /// HTTP status for HttpError and friends, 0 otherwise.
  int http_status() const noexcept { return http_status_; }

  Error& with_origin(std::optional<std::string> video_id, std::optional<std::int64_t> frame_index);
  Error& with_http_status(int status);

 private:
  ErrorCode code_;
  std::optional<std::string> video_id_;
  std::optional<std::int64_t> frame_index_;
  int http_status_ = 0;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace qcaption
