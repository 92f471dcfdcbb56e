#pragma once

#include <cstdint>

#include "modc/pool.hpp"

namespace modc {

class HeartbeatTable;

using WorkerId = std::uint32_t;

/// Pool address of a task descriptor.
struct TaskRef {
  PoolAddress addr;
  friend constexpr bool operator==(TaskRef, TaskRef) = default;
};

enum class StealStatus { ok, empty, retry };

struct StealResult {
  StealStatus status;
  TaskRef task;
};

/// Fixed-capacity Chase-Lev work-stealing deque living in the pool.
///
/// The owner pushes and pops at the bottom; anyone else steals from the top.
/// The owner field is itself pool-resident so a survivor can claim the queue
/// of a worker that has been pronounced dead and keep draining it.
class WorkQueue {
 public:
  static constexpr std::uint64_t default_capacity = std::uint64_t{1} << 16;

  static WorkQueue create(Pool& pool, WorkerId owner, std::uint64_t capacity = default_capacity);
  static WorkQueue attach(Pool& pool, PoolAddress addr) { return WorkQueue(pool, addr); }

  PoolAddress address() const noexcept { return base_; }
  WorkerId owner() const;
  std::uint64_t capacity() const;
  /// Racy snapshot of bottom - top; only exact at quiescence.
  std::int64_t size_hint() const;

  void push(WorkerId caller, TaskRef task);
  /// Owner end, LIFO. Null ref means empty.
  TaskRef pop(WorkerId caller);
  /// Steal end, FIFO. A lost CAS race reports retry rather than looping.
  StealResult steal(WorkerId caller);

  /// Moves ownership away from a worker the heartbeat table has marked dead.
  /// Returns false if `old_owner` is not dead or another claimant won.
  bool take_ownership(const HeartbeatTable& heartbeats, WorkerId new_owner, WorkerId old_owner);

 private:
  WorkQueue(Pool& pool, PoolAddress base) : pool_(&pool), base_(base) {}

  PoolAddress top_addr() const { return base_; }
  PoolAddress bottom_addr() const { return base_ + 64; }
  PoolAddress owner_addr() const { return base_ + 128; }
  PoolAddress capacity_addr() const { return base_ + 136; }
  PoolAddress buffer_addr() const { return base_ + 144; }
  PoolAddress slot(std::int64_t index) const;
  void require_owner(WorkerId caller) const;

  Pool* pool_;
  PoolAddress base_;
};

}  // namespace modc
