// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "qcaption/fusion_pipeline.hpp"
#include "qcaption/media_io.hpp"

namespace qcaption::service {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_upload_bytes = std::size_t{512} * 1024 * 1024;
  /// Caption requests selecting more items than this run as background jobs.
  int async_threshold = 16;
  std::size_t session_turn_limit = 50;
  std::string cors_origin = "*";
  bool allow_path_registration = true;
  /// Built UI bundle served at "/" (optional).
  std::filesystem::path static_dir;
  /// Uploaded videos; defaults to a per-process temp directory.
  std::filesystem::path data_dir;
  /// Videos and sessions are saved here after every change and restored at
  /// startup when set.
  std::filesystem::path snapshot_path;
  /// Prompts and knobs applied before request parameters.
  fusion::PipelineConfig pipeline_defaults;
};

/// HTTP/JSON front end for interactive use. All routes live under /v1
/// except /healthz.
class QaService {
 public:
  QaService(ServiceConfig cfg, fusion::Backends backends,
            std::shared_ptr<const media::MediaDecoder> decoder = nullptr);
  ~QaService();
  QaService(const QaService&) = delete;
  QaService& operator=(const QaService&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void serve();
  void stop();
  int port() const;
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qcaption::service
