// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/error.hpp"

namespace qcaption {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::TimestampOutOfRange: return "TimestampOutOfRange";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::UnsupportedByServer: return "UnsupportedByServer";
    case ErrorCode::ContextTooLong: return "ContextTooLong";
    case ErrorCode::ScriptExhausted: return "ScriptExhausted";
    case ErrorCode::AllFramesFailed: return "AllFramesFailed";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::JudgeUnparseable: return "JudgeUnparseable";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::MissingVideo: return "MissingVideo";
    case ErrorCode::UnmatchedQuestionId: return "UnmatchedQuestionId";
    case ErrorCode::MissingBaseline: return "MissingBaseline";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::ConfigError); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

Error& Error::with_origin(std::optional<std::string> video_id,
                          std::optional<std::int64_t> frame_index) {
  if (video_id) video_id_ = std::move(video_id);
  if (frame_index) frame_index_ = frame_index;
  return *this;
}

Error& Error::with_http_status(int status) {
  http_status_ = status;
  return *this;
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace qcaption
