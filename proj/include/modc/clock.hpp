#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <vector>

#include "modc/deque.hpp"

namespace modc {

/// Time source for heartbeats and suspicion timeouts, in ticks.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::uint64_t now() const = 0;
  virtual std::uint64_t ticks_per_ms() const = 0;

  // Hooks for clocks whose progress depends on the workers themselves.
  virtual void enlist(WorkerId) {}
  virtual void retire(WorkerId) {}
  virtual void tick(WorkerId) {}
};

/// Wall-clock microseconds since construction.
class SteadyClock final : public Clock {
 public:
  SteadyClock() : start_(std::chrono::steady_clock::now()) {}
  std::uint64_t now() const override;
  std::uint64_t ticks_per_ms() const override { return 1000; }

 private:
  std::chrono::steady_clock::time_point start_;
};

/// Advanced only by explicit calls; for scripted detector traces.
class ScriptedClock final : public Clock {
 public:
  std::uint64_t now() const override { return now_.load(); }
  std::uint64_t ticks_per_ms() const override { return 1; }
  void set(std::uint64_t t) { now_.store(t); }
  void advance(std::uint64_t dt = 1) { now_.fetch_add(dt); }

 private:
  std::atomic<std::uint64_t> now_{0};
};

/// Virtual time for deterministic runs: one tick is one virtual
/// millisecond, and the clock moves from t to t+1 only once every enlisted
/// worker has observed t. A worker that halts is retired by the fault
/// injector, so its peers' time keeps moving while its own heartbeat stays
/// frozen; a live worker can never fall a tick behind, which removes
/// scheduling noise from detection.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(std::uint32_t workers);

  std::uint64_t now() const override { return now_.load(); }
  std::uint64_t ticks_per_ms() const override { return 1; }
  void enlist(WorkerId w) override;
  void retire(WorkerId w) override;
  void tick(WorkerId w) override;

 private:
  void try_advance();

  std::atomic<std::uint64_t> now_{0};
  std::unique_ptr<std::atomic<bool>[]> live_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> seen_;
  std::uint32_t workers_;
};

}  // namespace modc
