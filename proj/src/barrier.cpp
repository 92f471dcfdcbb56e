#include "modc/barrier.hpp"

#include <string>
#include <thread>

namespace modc {

Word128 BarrierWord::pack() const noexcept {
  const std::uint64_t m = membership_seq & seq_mask;
  const std::uint64_t r = release_seq & seq_mask;
  return {(m << 16) | (r >> 32), ((r & 0xffffffffu) << 32) | waiting};
}

BarrierWord BarrierWord::unpack(Word128 w) noexcept {
  BarrierWord b;
  b.membership_seq = w.hi >> 16;
  b.release_seq = ((w.hi & 0xffffu) << 32) | (w.lo >> 32);
  b.waiting = static_cast<std::uint32_t>(w.lo & 0xffffffffu);
  return b;
}

// Layout: control word @0 (16-aligned), member count @16, slots @64.
GroupBarrier GroupBarrier::create(Pool& pool, std::uint32_t max_members) {
  const PoolAddress base = pool.alloc(64 + 8 * std::uint64_t{max_members}, 64);
  pool.store64(base + 16, max_members);
  return GroupBarrier(pool, base);
}

std::uint32_t GroupBarrier::max_members() const { return static_cast<std::uint32_t>(pool_->load64(base_ + 16)); }
PoolAddress GroupBarrier::member_addr(WorkerId w) const {
  if (w >= max_members()) throw Error(Errc::not_member, "worker id " + std::to_string(w) + " out of range");
  return base_ + 64 + 8 * std::uint64_t{w};
}

BarrierWord GroupBarrier::word() const { return BarrierWord::unpack(pool_->load128(base_)); }
bool GroupBarrier::is_member(WorkerId w) const { return pool_->load64(member_addr(w)) != 0; }

std::uint32_t GroupBarrier::count_active() const {
  std::uint32_t n = 0;
  for (WorkerId w = 0; w < max_members(); ++w) n += is_member(w) ? 1 : 0;
  return n;
}

void GroupBarrier::join(WorkerId w) {
  if (!pool_->cas64(member_addr(w), 0, 1).success) {
    throw Error(Errc::already_member, "worker " + std::to_string(w) + " already participates");
  }
  // An arrival that counted members before the join must not commit.
  bump_membership();
}

bool GroupBarrier::remove_clear_slot(WorkerId removed) {
  return pool_->cas64(member_addr(removed), 1, 0).success;
}

void GroupBarrier::bump_membership() {
  Word128 cur = pool_->load128(base_);
  for (;;) {
    BarrierWord next = BarrierWord::unpack(cur);
    next.membership_seq += 1;
    next.waiting = 0;
    auto r = pool_->cas128(base_, cur, next.pack());
    if (r.success) return;
    cur = r.observed;
  }
}

bool GroupBarrier::remove(WorkerId removed) {
  if (!is_member(removed)) return false;
  // First bump: cancels every pending wait, the dead member's included.
  bump_membership();
  if (!remove_clear_slot(removed)) return false;
  // Second bump: cancels arrivals that counted members before the slot was
  // cleared, so no release is ever decided on the stale count.
  bump_membership();
  return true;
}

ArrivePlan GroupBarrier::prepare_arrive(WorkerId w) const {
  ArrivePlan plan{w, word(), 0};
  plan.active = count_active();
  return plan;
}

std::optional<ArriveTicket> GroupBarrier::commit_arrive(const ArrivePlan& plan) {
  BarrierWord next = plan.observed;
  bool releases = false;
  if (next.waiting + 1 >= plan.active) {
    next.release_seq += 1;
    next.waiting = 0;
    releases = true;
  } else {
    next.waiting += 1;
  }
  if (!pool_->cas128(base_, plan.observed.pack(), next.pack()).success) return std::nullopt;
  return ArriveTicket{plan.observed, next, releases};
}

std::optional<ArriveTicket> GroupBarrier::arrive(WorkerId w, std::optional<std::uint64_t> expected_membership) {
  if (!is_member(w)) throw Error(Errc::not_member, "worker " + std::to_string(w) + " is not a participant");
  for (;;) {
    const ArrivePlan plan = prepare_arrive(w);
    if (expected_membership && plan.observed.membership_seq != *expected_membership) return std::nullopt;
    if (auto ticket = commit_arrive(plan)) return ticket;
  }
}

BarrierPoll GroupBarrier::poll(const ArriveTicket& ticket) const {
  if (ticket.released_barrier) return BarrierPoll::released;
  const BarrierWord now = word();
  if (now.release_seq != ticket.after.release_seq) return BarrierPoll::released;
  if (now.membership_seq != ticket.after.membership_seq) return BarrierPoll::membership_changed;
  return BarrierPoll::waiting;
}

BarrierPoll GroupBarrier::retract(const ArriveTicket& ticket) {
  if (ticket.released_barrier) return BarrierPoll::released;
  Word128 cur = pool_->load128(base_);
  for (;;) {
    const BarrierWord seen = BarrierWord::unpack(cur);
    if (seen.release_seq != ticket.after.release_seq) return BarrierPoll::released;
    if (seen.membership_seq != ticket.after.membership_seq) return BarrierPoll::membership_changed;
    BarrierWord next = seen;
    next.waiting -= 1;
    auto r = pool_->cas128(base_, cur, next.pack());
    if (r.success) return BarrierPoll::waiting;
    cur = r.observed;
  }
}

std::optional<BarrierOutcome> GroupBarrier::arrive_and_wait(WorkerId w, const std::function<bool()>& on_spin) {
  const auto ticket = arrive(w);
  for (;;) {
    switch (poll(*ticket)) {
      case BarrierPoll::released: return BarrierOutcome::released;
      case BarrierPoll::membership_changed: return BarrierOutcome::membership_changed;
      case BarrierPoll::waiting: break;
    }
    if (on_spin && on_spin()) {
      switch (retract(*ticket)) {
        case BarrierPoll::released: return BarrierOutcome::released;
        case BarrierPoll::membership_changed: return BarrierOutcome::membership_changed;
        case BarrierPoll::waiting: return std::nullopt;
      }
    }
    std::this_thread::yield();
  }
}

}  // namespace modc
