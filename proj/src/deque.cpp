#include "modc/deque.hpp"

#include <bit>
#include <string>

#include "modc/heartbeat.hpp"

namespace modc {

namespace {
std::int64_t as_signed(std::uint64_t v) { return static_cast<std::int64_t>(v); }
std::uint64_t as_unsigned(std::int64_t v) { return static_cast<std::uint64_t>(v); }
}  // namespace

WorkQueue WorkQueue::create(Pool& pool, WorkerId owner, std::uint64_t capacity) {
  if (!std::has_single_bit(capacity)) throw Error(Errc::config_error, "deque capacity must be a power of two");
  const PoolAddress base = pool.alloc(192, 64);
  const PoolAddress buffer = pool.alloc(capacity * sizeof(std::uint64_t), 64);
  WorkQueue q(pool, base);
  pool.store64(q.owner_addr(), owner);
  pool.store64(q.capacity_addr(), capacity);
  pool.store64(q.buffer_addr(), buffer.offset);
  return q;
}

WorkerId WorkQueue::owner() const { return static_cast<WorkerId>(pool_->load64(owner_addr())); }
std::uint64_t WorkQueue::capacity() const { return pool_->load64(capacity_addr()); }

std::int64_t WorkQueue::size_hint() const {
  const std::int64_t t = as_signed(pool_->load64(top_addr()));
  const std::int64_t b = as_signed(pool_->load64(bottom_addr()));
  return b > t ? b - t : 0;
}

PoolAddress WorkQueue::slot(std::int64_t index) const {
  const std::uint64_t mask = capacity() - 1;
  return PoolAddress{pool_->load64(buffer_addr())} + (as_unsigned(index) & mask) * 8;
}

void WorkQueue::require_owner(WorkerId caller) const {
  if (owner() != caller) {
    throw Error(Errc::not_owner, "worker " + std::to_string(caller) + " does not own queue of worker " +
                                     std::to_string(owner()));
  }
}

void WorkQueue::push(WorkerId caller, TaskRef task) {
  require_owner(caller);
  const std::int64_t b = as_signed(pool_->load64(bottom_addr()));
  const std::int64_t t = as_signed(pool_->load64(top_addr()));
  if (b - t >= static_cast<std::int64_t>(capacity())) {
    throw Error(Errc::queue_full, "deque holds " + std::to_string(b - t) + " tasks");
  }
  pool_->store64(slot(b), task.addr.offset);
  pool_->store64(bottom_addr(), as_unsigned(b + 1));
}

TaskRef WorkQueue::pop(WorkerId caller) {
  require_owner(caller);
  const std::int64_t b = as_signed(pool_->load64(bottom_addr())) - 1;
  pool_->store64(bottom_addr(), as_unsigned(b));
  std::int64_t t = as_signed(pool_->load64(top_addr()));
  if (t > b) {
    pool_->store64(bottom_addr(), as_unsigned(b + 1));
    return {};
  }
  TaskRef task{PoolAddress{pool_->load64(slot(b))}};
  if (t == b) {
    // Last element: race the thieves for it on top.
    const bool won = pool_->cas64(top_addr(), as_unsigned(t), as_unsigned(t + 1)).success;
    pool_->store64(bottom_addr(), as_unsigned(b + 1));
    if (!won) return {};
  }
  return task;
}

StealResult WorkQueue::steal(WorkerId /*caller*/) {
  const std::int64_t t = as_signed(pool_->load64(top_addr()));
  const std::int64_t b = as_signed(pool_->load64(bottom_addr()));
  if (t >= b) return {StealStatus::empty, {}};
  TaskRef task{PoolAddress{pool_->load64(slot(t))}};
  if (!pool_->cas64(top_addr(), as_unsigned(t), as_unsigned(t + 1)).success) {
    return {StealStatus::retry, {}};
  }
  return {StealStatus::ok, task};
}

bool WorkQueue::take_ownership(const HeartbeatTable& heartbeats, WorkerId new_owner, WorkerId old_owner) {
  if (!heartbeats.is_dead(old_owner)) return false;
  return pool_->cas64(owner_addr(), old_owner, new_owner).success;
}

}  // namespace modc
