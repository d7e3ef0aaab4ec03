#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace mvoc {

// Fixed-size worker pool. parallel_for assigns each index to exactly one task
// and callers combine results by index afterwards, so outputs are independent
// of worker count and scheduling order.
class ThreadPool {
 public:
  explicit ThreadPool(int threads) {
    if (threads < 1) threads = 1;
    for (int i = 0; i < threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~ThreadPool() {
    {
      std::unique_lock lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  int size() const { return static_cast<int>(workers_.size()); }

  // Runs fn(i) for i in [0, n); blocks until all finish. Exceptions from fn
  // are rethrown (first one wins).
  void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    if (workers_.size() == 1) {
      for (std::int64_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::mutex done_mu;
    std::condition_variable done_cv;
    std::int64_t remaining = n;
    std::exception_ptr err;
    {
      std::unique_lock lock(mu_);
      for (std::int64_t i = 0; i < n; ++i) {
        tasks_.push([&, i] {
          try {
            fn(i);
          } catch (...) {
            std::unique_lock dl(done_mu);
            if (!err) err = std::current_exception();
          }
          std::unique_lock dl(done_mu);
          if (--remaining == 0) done_cv.notify_one();
        });
      }
    }
    cv_.notify_all();
    std::unique_lock dl(done_mu);
    done_cv.wait(dl, [&] { return remaining == 0; });
    if (err) std::rethrow_exception(err);
  }

 private:
  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
        if (stop_ && tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop();
      }
      task();
    }
  }

  std::vector<std::thread> workers_;
  std::queue<std::function<void()>> tasks_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
};

}  // namespace mvoc
