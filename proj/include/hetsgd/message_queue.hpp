#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>

#include "hetsgd/errors.hpp"

namespace hetsgd {

/// Unbounded multi-producer FIFO. Messages already queued when the queue is
/// closed are still delivered; receive() returns nullopt once it is closed
/// and drained.
template <class T>
class MessageQueue {
 public:
  void send(T msg) {
    {
      std::lock_guard lock(mu_);
      if (closed_) throw QueueClosedError();
      items_.push_back(std::move(msg));
    }
    cv_.notify_one();
  }

  std::optional<T> receive() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return closed_ || !items_.empty(); });
    return popLocked();
  }

  template <class Rep, class Period>
  std::optional<T> receiveFor(std::chrono::duration<Rep, Period> timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || !items_.empty(); });
    return popLocked();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  std::optional<T> popLocked() {
    if (items_.empty()) return std::nullopt;
    T out = std::move(items_.front());
    items_.pop_front();
    return out;
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

}  // namespace hetsgd
