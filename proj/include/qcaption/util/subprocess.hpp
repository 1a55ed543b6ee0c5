// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace qcaption::util {

/// Child process with piped stdin/stdout; stderr is drained on a background
/// thread so a chatty child never blocks on a full pipe.
class Subprocess {
 public:
  /// argv[0] is resolved through PATH. Throws Error(FileNotFound) when the
  /// executable cannot be spawned.
  explicit Subprocess(const std::vector<std::string>& argv, bool pipe_stdin = false);
  ~Subprocess();

  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  /// Writes all bytes to the child's stdin. Returns false if the pipe closed.
  bool write_stdin(std::span<const std::uint8_t> bytes);
  void close_stdin();

  /// Reads exactly buf.size() bytes unless stdout hits EOF first; returns the
  /// number of bytes read.
  std::size_t read_stdout(std::span<std::uint8_t> buf);
  std::vector<std::uint8_t> read_stdout_all();

  /// Waits for exit; returns the exit status (128+signal on signal death).
  int wait();

  std::string stderr_text() const;

 private:
  int pid_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  int stderr_fd_ = -1;
  bool waited_ = false;
  int status_ = 0;
  std::thread stderr_reader_;
  mutable std::mutex stderr_mu_;
  std::string stderr_buf_;
};

struct RunResult {
  int exit_code = 0;
  std::vector<std::uint8_t> out;
  std::string err;
};

RunResult run_capture(const std::vector<std::string>& argv);

/// Last `max_chars` characters of a decoder's stderr, for error messages.
std::string tail_excerpt(const std::string& text, std::size_t max_chars = 400);

}  // namespace qcaption::util
