// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#include "qcaption/util/subprocess.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <mutex>

#include "qcaption/error.hpp"

extern char** environ;

namespace qcaption::util {
namespace {

void ignore_sigpipe_once() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void close_fd(int& fd) {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

struct Pipe {
  int rd = -1;
  int wr = -1;
  Pipe() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) fail(ErrorCode::IoError, std::string("pipe2: ") + std::strerror(errno));
    rd = fds[0];
    wr = fds[1];
  }
};

}  // namespace

Subprocess::Subprocess(const std::vector<std::string>& argv, bool pipe_stdin) {
  if (argv.empty()) fail(ErrorCode::InvalidArgument, "empty argv");
  ignore_sigpipe_once();

  Pipe out;
  Pipe err;
  Pipe in;  // unused unless pipe_stdin

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  if (pipe_stdin) {
    posix_spawn_file_actions_adddup2(&actions, in.rd, STDIN_FILENO);
  } else {
    posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  }
  posix_spawn_file_actions_adddup2(&actions, out.wr, STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&actions, err.wr, STDERR_FILENO);

  std::vector<char*> cargv;
  cargv.reserve(argv.size() + 1);
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);

  const int rc = ::posix_spawnp(&pid_, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);

  ::close(out.wr);
  ::close(err.wr);
  ::close(in.rd);
  if (rc != 0) {
    ::close(out.rd);
    ::close(err.rd);
    ::close(in.wr);
    pid_ = -1;
    fail(ErrorCode::FileNotFound, "cannot spawn '" + argv[0] + "': " + std::strerror(rc));
  }
  stdout_fd_ = out.rd;
  stderr_fd_ = err.rd;
  if (pipe_stdin) {
    stdin_fd_ = in.wr;
  } else {
    ::close(in.wr);
  }

  stderr_reader_ = std::thread([this] {
    std::array<char, 4096> buf{};
    for (;;) {
      const ssize_t n = ::read(stderr_fd_, buf.data(), buf.size());
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) break;
      std::lock_guard lock(stderr_mu_);
      stderr_buf_.append(buf.data(), static_cast<std::size_t>(n));
      // Keep memory bounded for long-running decodes.
      if (stderr_buf_.size() > (1u << 20)) stderr_buf_.erase(0, stderr_buf_.size() - (1u << 19));
    }
  });
}

Subprocess::~Subprocess() {
  close_fd(stdin_fd_);
  close_fd(stdout_fd_);
  if (pid_ > 0 && !waited_) {
    ::kill(pid_, SIGKILL);
    wait();
  }
  if (stderr_reader_.joinable()) stderr_reader_.join();
  close_fd(stderr_fd_);
}

bool Subprocess::write_stdin(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::write(stdin_fd_, bytes.data() + off, bytes.size() - off);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

void Subprocess::close_stdin() { close_fd(stdin_fd_); }

std::size_t Subprocess::read_stdout(std::span<std::uint8_t> buf) {
  std::size_t off = 0;
  while (off < buf.size()) {
    const ssize_t n = ::read(stdout_fd_, buf.data() + off, buf.size() - off);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    off += static_cast<std::size_t>(n);
  }
  return off;
}

std::vector<std::uint8_t> Subprocess::read_stdout_all() {
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 65536> buf{};
  for (;;) {
    const ssize_t n = ::read(stdout_fd_, buf.data(), buf.size());
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  return out;
}

int Subprocess::wait() {
  if (waited_ || pid_ <= 0) return status_;
  close_fd(stdin_fd_);
  int raw = 0;
  while (::waitpid(pid_, &raw, 0) < 0 && errno == EINTR) {
  }
  waited_ = true;
  if (WIFEXITED(raw)) {
    status_ = WEXITSTATUS(raw);
  } else if (WIFSIGNALED(raw)) {
    status_ = 128 + WTERMSIG(raw);
  }
  if (stderr_reader_.joinable()) stderr_reader_.join();
  return status_;
}

std::string Subprocess::stderr_text() const {
  std::lock_guard lock(stderr_mu_);
  return stderr_buf_;
}

RunResult run_capture(const std::vector<std::string>& argv) {
  Subprocess proc(argv);
  RunResult result;
  result.out = proc.read_stdout_all();
  result.exit_code = proc.wait();
  result.err = proc.stderr_text();
  return result;
}

std::string tail_excerpt(const std::string& text, std::size_t max_chars) {
  if (text.size() <= max_chars) return text;
  return "..." + text.substr(text.size() - max_chars);
}

}  // namespace qcaption::util
