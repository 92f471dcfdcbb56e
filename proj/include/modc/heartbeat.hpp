#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "modc/deque.hpp"
#include "modc/pool.hpp"

namespace modc {

enum class Liveness : std::uint64_t {
  idle = 0,  // not participating yet (hot spare)
  alive = 1,
  dead = 2,
};

/// Pool-resident failure-detection state: a global frontier counter plus one
/// heartbeat counter and liveness mark per worker.
class HeartbeatTable {
 public:
  static HeartbeatTable create(Pool& pool, std::uint32_t workers);
  static HeartbeatTable attach(Pool& pool, PoolAddress addr) { return HeartbeatTable(pool, addr); }

  PoolAddress address() const noexcept { return base_; }
  std::uint32_t size() const;

  /// idle -> alive. Returns false if the worker was already enrolled.
  bool enroll(WorkerId w);
  Liveness status(WorkerId w) const;
  bool is_dead(WorkerId w) const { return status(w) == Liveness::dead; }

  /// Ignored unless `w` is alive.
  void beat(WorkerId w);
  std::uint64_t beats(WorkerId w) const;
  std::uint64_t frontier() const;

  /// Moves the frontier from v to v+1 when at least `quorum` alive workers
  /// have beaten at least v+1 times. No quorum means every alive worker.
  /// Returns true if this call advanced it.
  bool advance_frontier(std::optional<std::uint32_t> quorum = std::nullopt);

  /// alive -> dead. Exactly one caller wins per worker.
  bool pronounce_dead(WorkerId w);

 private:
  HeartbeatTable(Pool& pool, PoolAddress base) : pool_(&pool), base_(base) {}
  PoolAddress beat_addr(WorkerId w) const;
  PoolAddress status_addr(WorkerId w) const;

  Pool* pool_;
  PoolAddress base_;
};

/// Worker-private suspicion bookkeeping. Remembers when each peer's counter
/// last changed, as seen by this observer, and suspects peers whose counter
/// has been frozen for at least `timeout`.
class FailureDetector {
 public:
  FailureDetector(WorkerId self, std::uint32_t workers);

  /// Pure observation of the table; never changes shared state.
  std::vector<WorkerId> scan(const HeartbeatTable& table, std::uint64_t now, std::uint64_t timeout);

 private:
  struct Observation {
    bool seen = false;
    std::uint64_t beat = 0;
    std::uint64_t since = 0;
  };
  WorkerId self_;
  std::vector<Observation> observed_;
};

}  // namespace modc
