// Copyright (C) 2026 QCaption contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstddef>
#include <mutex>

namespace qcaption::util {

// Counting semaphore with a runtime limit (std::counting_semaphore fixes the
// maximum at compile time). Also tracks the peak number of holders.
class Semaphore {
 public:
  explicit Semaphore(std::size_t limit) : limit_(limit == 0 ? 1 : limit) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return held_ < limit_; });
    ++held_;
    if (held_ > peak_) peak_ = held_;
  }

  void release() {
    {
      std::lock_guard lock(mu_);
      --held_;
    }
    cv_.notify_one();
  }

  std::size_t limit() const noexcept { return limit_; }

  std::size_t peak() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  const std::size_t limit_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t held_ = 0;
  std::size_t peak_ = 0;
};

class SemaphoreGuard {
 public:
  explicit SemaphoreGuard(Semaphore& sem) : sem_(sem) { sem_.acquire(); }
  ~SemaphoreGuard() { sem_.release(); }
  SemaphoreGuard(const SemaphoreGuard&) = delete;
  SemaphoreGuard& operator=(const SemaphoreGuard&) = delete;

 private:
  Semaphore& sem_;
};

}  // namespace qcaption::util
