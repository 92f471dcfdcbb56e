#include "modc/heartbeat.hpp"

namespace modc {

// Layout: frontier @0, worker count @8, beats[n] @64, status[n] after.
HeartbeatTable HeartbeatTable::create(Pool& pool, std::uint32_t workers) {
  const PoolAddress base = pool.alloc(64 + 16 * std::uint64_t{workers}, 64);
  pool.store64(base + 8, workers);
  return HeartbeatTable(pool, base);
}

std::uint32_t HeartbeatTable::size() const { return static_cast<std::uint32_t>(pool_->load64(base_ + 8)); }

PoolAddress HeartbeatTable::beat_addr(WorkerId w) const { return base_ + 64 + 8 * std::uint64_t{w}; }
PoolAddress HeartbeatTable::status_addr(WorkerId w) const {
  return base_ + 64 + 8 * std::uint64_t{size()} + 8 * std::uint64_t{w};
}

bool HeartbeatTable::enroll(WorkerId w) {
  return pool_->cas64(status_addr(w), static_cast<std::uint64_t>(Liveness::idle),
                      static_cast<std::uint64_t>(Liveness::alive))
      .success;
}

Liveness HeartbeatTable::status(WorkerId w) const { return static_cast<Liveness>(pool_->load64(status_addr(w))); }

void HeartbeatTable::beat(WorkerId w) {
  if (status(w) != Liveness::alive) return;
  pool_->faa64(beat_addr(w), 1);
}

std::uint64_t HeartbeatTable::beats(WorkerId w) const { return pool_->load64(beat_addr(w)); }
std::uint64_t HeartbeatTable::frontier() const { return pool_->load64(base_); }

bool HeartbeatTable::advance_frontier(std::optional<std::uint32_t> quorum) {
  const std::uint64_t v = frontier();
  std::uint32_t alive = 0;
  std::uint32_t reached = 0;
  for (WorkerId w = 0; w < size(); ++w) {
    if (status(w) != Liveness::alive) continue;
    ++alive;
    if (beats(w) >= v + 1) ++reached;
  }
  const std::uint32_t needed = quorum.value_or(alive);
  if (alive == 0 || reached < needed) return false;
  return pool_->cas64(base_, v, v + 1).success;
}

bool HeartbeatTable::pronounce_dead(WorkerId w) {
  return pool_->cas64(status_addr(w), static_cast<std::uint64_t>(Liveness::alive),
                      static_cast<std::uint64_t>(Liveness::dead))
      .success;
}

FailureDetector::FailureDetector(WorkerId self, std::uint32_t workers) : self_(self), observed_(workers) {}

std::vector<WorkerId> FailureDetector::scan(const HeartbeatTable& table, std::uint64_t now,
                                            std::uint64_t timeout) {
  std::vector<WorkerId> suspects;
  for (WorkerId w = 0; w < observed_.size(); ++w) {
    if (w == self_ || table.status(w) != Liveness::alive) continue;
    Observation& o = observed_[w];
    const std::uint64_t b = table.beats(w);
    if (!o.seen || b != o.beat) {
      // First sighting starts the clock; nobody is suspected before a full
      // timeout of observation.
      o = {true, b, now};
      continue;
    }
    if (now - o.since >= timeout) suspects.push_back(w);
  }
  return suspects;
}

}  // namespace modc
