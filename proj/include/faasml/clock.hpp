// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0
//
// Worker clocks and the two executors that drive workers.
//
// Simulate mode runs one OS thread per worker but lets exactly one of them
// execute at a time. The baton always goes to the runnable worker with the
// smallest (virtual time, rank), so every side effect happens in virtual
// time order and a run is bit-reproducible. A worker gives up the baton
// whenever it charges time or blocks on a condition; blocked workers are
// woken by notify() (a store mutation) and resume no earlier than the
// notifier's virtual time.
//
// Real mode runs the same worker bodies as free threads against a steady
// clock; waits are polling loops.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "faasml/error.hpp"

namespace faasml {

namespace detail {

[[noreturn]] inline void fail_timeout(const std::function<void()>& on_timeout) {
  if (on_timeout) on_timeout();
  throw Error(ErrorCode::straggler_timeout, "wait timed out");
}

}  // namespace detail

/// Per-worker time source handed to everything a worker does.
class WorkerClock {
 public:
  using Ready = std::function<bool()>;
  using OnTimeout = std::function<void()>;  // throws the timeout error

  virtual ~WorkerClock() = default;
  virtual std::size_t rank() const = 0;
  /// Seconds since the job started (virtual or real).
  virtual double now() const = 0;
  /// Adds modeled time; a no-op where time passes by itself.
  virtual void charge(double seconds) = 0;
  /// Returns once ready() holds; calls on_timeout(), which throws, after
  /// timeout_s.
  virtual void wait_until(const Ready& ready, double timeout_s, double poll_interval_s,
                          const OnTimeout& on_timeout) = 0;
  /// Announces a shared-state mutation so blocked waiters re-check.
  virtual void notify() = 0;
  virtual bool simulated() const = 0;
};

/// Single-threaded clock for tests and tools: charges accumulate, waits
/// either succeed immediately or time out.
class ManualClock final : public WorkerClock {
 public:
  explicit ManualClock(std::size_t rank = 0) : rank_(rank) {}
  std::size_t rank() const override { return rank_; }
  double now() const override { return now_; }
  void charge(double seconds) override { now_ += seconds; }
  void wait_until(const Ready& ready, double timeout_s, double, const OnTimeout& on_timeout) override {
    if (ready()) return;
    now_ += timeout_s;
    detail::fail_timeout(on_timeout);
  }
  void notify() override {}
  bool simulated() const override { return true; }

 private:
  std::size_t rank_;
  double now_ = 0.0;
};

/// Runs one body per worker and rethrows the earliest worker failure.
class Executor {
 public:
  using Body = std::function<void(WorkerClock&)>;
  virtual ~Executor() = default;
  virtual void run(std::size_t workers, const Body& body) = 0;
  virtual bool simulated() const = 0;
};

namespace detail {

struct WorkerFailure {
  double time = 0.0;
  std::size_t rank = 0;
  bool aborted = false;
  std::exception_ptr error;
};

inline bool is_abort(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return err.code() == ErrorCode::aborted;
  } catch (...) {
    return false;
  }
}

inline void rethrow_first(std::vector<WorkerFailure>& failures) {
  if (failures.empty()) return;
  std::stable_sort(failures.begin(), failures.end(), [](const WorkerFailure& a, const WorkerFailure& b) {
    if (a.aborted != b.aborted) return !a.aborted;
    if (a.time != b.time) return a.time < b.time;
    return a.rank < b.rank;
  });
  std::rethrow_exception(failures.front().error);
}

}  // namespace detail

class SimEngine final : public Executor {
 public:
  bool simulated() const override { return true; }

  void run(std::size_t workers, const Body& body) override {
    {
      std::lock_guard lock(mu_);
      slots_.assign(workers, Slot{});
      aborted_ = false;
      deadlock_ = false;
      failures_.clear();
      running_ = workers ? 0 : npos;
    }
    std::vector<Clock> clocks;
    clocks.reserve(workers);
    for (std::size_t r = 0; r < workers; ++r) clocks.emplace_back(*this, r);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t r = 0; r < workers; ++r) {
      threads.emplace_back([this, r, &clocks, &body] {
        try {
          {
            std::unique_lock lock(mu_);
            await_turn(r, lock);
          }
          body(clocks[r]);
        } catch (...) {
          auto err = std::current_exception();
          std::lock_guard lock(mu_);
          const bool ab = detail::is_abort(err);
          failures_.push_back({slots_[r].t, r, ab, err});
          if (!ab) aborted_ = true;
        }
        std::lock_guard lock(mu_);
        slots_[r].state = State::done;
        pick_next();
      });
    }
    for (auto& t : threads) t.join();
    detail::rethrow_first(failures_);
  }

  /// Final virtual time of each worker from the last run.
  std::vector<double> final_times() const {
    std::lock_guard lock(mu_);
    std::vector<double> out;
    for (const auto& s : slots_) out.push_back(s.t);
    return out;
  }

 private:
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  enum class State { runnable, blocked, done };
  struct Slot {
    double t = 0.0;
    State state = State::runnable;
  };

  class Clock final : public WorkerClock {
   public:
    Clock(SimEngine& e, std::size_t r) : engine_(&e), rank_(r) {}
    std::size_t rank() const override { return rank_; }
    double now() const override {
      std::lock_guard lock(engine_->mu_);
      return engine_->slots_[rank_].t;
    }
    void charge(double seconds) override { engine_->charge(rank_, seconds); }
    void wait_until(const Ready& ready, double timeout_s, double, const OnTimeout& on_timeout) override {
      const double start = now();
      for (;;) {
        if (ready()) return;
        if (now() - start >= timeout_s) detail::fail_timeout(on_timeout);
        if (!engine_->block(rank_)) {
          engine_->raise_time(rank_, start + timeout_s);
          detail::fail_timeout(on_timeout);
        }
      }
    }
    void notify() override { engine_->signal(rank_); }
    bool simulated() const override { return true; }

   private:
    SimEngine* engine_;
    std::size_t rank_;
  };

  // Hands the baton to the runnable worker with the smallest (time, rank).
  // With nothing runnable, blocked workers are deadlocked and get the baton
  // one at a time so they can raise their timeouts.
  void pick_next() {
    std::size_t best = npos;
    for (std::size_t r = 0; r < slots_.size(); ++r) {
      const auto& s = slots_[r];
      const bool eligible = s.state == State::runnable || (aborted_ && s.state == State::blocked);
      if (!eligible) continue;
      if (best == npos || s.t < slots_[best].t) best = r;
    }
    if (best == npos) {
      for (std::size_t r = 0; r < slots_.size(); ++r) {
        if (slots_[r].state == State::blocked) {
          deadlock_ = true;
          best = r;
          break;
        }
      }
    }
    running_ = best;
    cv_.notify_all();
  }

  void await_turn(std::size_t rank, std::unique_lock<std::mutex>& lock) {
    cv_.wait(lock, [&] { return running_ == rank; });
    if (aborted_) {
      slots_[rank].state = State::runnable;
      throw Error(ErrorCode::aborted, "worker " + std::to_string(rank) + " stopped after another worker failed");
    }
  }

  void charge(std::size_t rank, double seconds) {
    std::unique_lock lock(mu_);
    if (seconds > 0.0) slots_[rank].t += seconds;
    pick_next();
    await_turn(rank, lock);
  }

  // Returns false when woken only because every live worker is blocked.
  bool block(std::size_t rank) {
    std::unique_lock lock(mu_);
    slots_[rank].state = State::blocked;
    pick_next();
    await_turn(rank, lock);
    if (slots_[rank].state == State::blocked) {
      slots_[rank].state = State::runnable;
      return !deadlock_;
    }
    return true;
  }

  void signal(std::size_t rank) {
    std::lock_guard lock(mu_);
    const double t = slots_[rank].t;
    deadlock_ = false;
    for (auto& s : slots_) {
      if (s.state == State::blocked) {
        s.state = State::runnable;
        s.t = std::max(s.t, t);
      }
    }
  }

  void raise_time(std::size_t rank, double t) {
    std::lock_guard lock(mu_);
    slots_[rank].t = std::max(slots_[rank].t, t);
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<Slot> slots_;
  std::size_t running_ = npos;
  bool aborted_ = false;
  bool deadlock_ = false;
  std::vector<detail::WorkerFailure> failures_;
};

class ThreadExecutor final : public Executor {
 public:
  bool simulated() const override { return false; }

  void run(std::size_t workers, const Body& body) override {
    aborted_ = false;
    start_ = std::chrono::steady_clock::now();
    std::vector<Clock> clocks;
    clocks.reserve(workers);
    for (std::size_t r = 0; r < workers; ++r) clocks.emplace_back(*this, r);
    std::vector<detail::WorkerFailure> failures;
    std::mutex fail_mu;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t r = 0; r < workers; ++r) {
      threads.emplace_back([&, r] {
        try {
          body(clocks[r]);
        } catch (...) {
          auto err = std::current_exception();
          const bool ab = detail::is_abort(err);
          if (!ab) aborted_ = true;
          std::lock_guard lock(fail_mu);
          failures.push_back({clocks[r].now(), r, ab, err});
        }
      });
    }
    for (auto& t : threads) t.join();
    detail::rethrow_first(failures);
  }

 private:
  class Clock final : public WorkerClock {
   public:
    Clock(ThreadExecutor& e, std::size_t r) : exec_(&e), rank_(r) {}
    std::size_t rank() const override { return rank_; }
    double now() const override {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - exec_->start_).count();
    }
    void charge(double) override {}
    void wait_until(const Ready& ready, double timeout_s, double poll_interval_s,
                    const OnTimeout& on_timeout) override {
      const double start = now();
      for (;;) {
        if (ready()) return;
        if (exec_->aborted_) {
          throw Error(ErrorCode::aborted, "worker " + std::to_string(rank_) + " stopped after another worker failed");
        }
        if (now() - start >= timeout_s) detail::fail_timeout(on_timeout);
        std::this_thread::sleep_for(std::chrono::duration<double>(poll_interval_s));
      }
    }
    void notify() override {}
    bool simulated() const override { return false; }

   private:
    ThreadExecutor* exec_;
    std::size_t rank_;
  };

  std::atomic<bool> aborted_{false};
  std::chrono::steady_clock::time_point start_{};
};

}  // namespace faasml
