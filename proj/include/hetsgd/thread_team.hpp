#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace hetsgd {

/// Fixed team of threads that runs task i on thread i. A team of size 1
/// runs the task on the calling thread.
class ThreadTeam {
 public:
  explicit ThreadTeam(std::size_t size) : size_(size < 1 ? 1 : size) {
    if (size_ == 1) return;
    threads_.reserve(size_);
    for (std::size_t i = 0; i < size_; ++i) threads_.emplace_back([this, i] { loop(i); });
  }

  ThreadTeam(const ThreadTeam&) = delete;
  ThreadTeam& operator=(const ThreadTeam&) = delete;

  ~ThreadTeam() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    start_.notify_all();
    for (auto& t : threads_) t.join();
  }

  std::size_t size() const noexcept { return size_; }

  /// Runs fn(0..tasks-1) concurrently and waits; tasks <= size().
  void run(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
    if (threads_.empty()) {
      for (std::size_t i = 0; i < tasks; ++i) fn(i);
      return;
    }
    std::unique_lock lock(mu_);
    task_ = &fn;
    tasks_ = tasks;
    pending_ = size_;
    error_ = nullptr;
    ++generation_;
    start_.notify_all();
    done_.wait(lock, [&] { return pending_ == 0; });
    task_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void loop(std::size_t index) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t)>* fn = nullptr;
      bool mine = false;
      {
        std::unique_lock lock(mu_);
        start_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = task_;
        mine = index < tasks_;
      }
      std::exception_ptr err;
      if (mine) {
        try {
          (*fn)(index);
        } catch (...) {
          err = std::current_exception();
        }
      }
      std::lock_guard lock(mu_);
      if (err && !error_) error_ = err;
      if (--pending_ == 0) done_.notify_one();
    }
  }

  std::size_t size_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable start_;
  std::condition_variable done_;
  const std::function<void(std::size_t)>* task_ = nullptr;
  std::size_t tasks_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  std::exception_ptr error_;
  bool stop_ = false;
};

}  // namespace hetsgd
