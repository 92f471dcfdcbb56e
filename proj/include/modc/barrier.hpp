#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "modc/deque.hpp"
#include "modc/pool.hpp"

namespace modc {

/// Decoded view of the barrier's 128-bit control word. From the most
/// significant end: membership sequence (48 bits), release sequence
/// (48 bits), waiting count (32 bits).
struct BarrierWord {
  std::uint64_t membership_seq = 0;
  std::uint64_t release_seq = 0;
  std::uint32_t waiting = 0;

  static constexpr std::uint64_t seq_mask = (std::uint64_t{1} << 48) - 1;

  Word128 pack() const noexcept;
  static BarrierWord unpack(Word128 w) noexcept;
  friend constexpr bool operator==(const BarrierWord&, const BarrierWord&) = default;
};

enum class BarrierOutcome { released, membership_changed };
enum class BarrierPoll { waiting, released, membership_changed };

/// Proof of arrival: the control word the arrival was committed against.
struct ArriveTicket {
  BarrierWord before;  // word observed by the successful cas
  BarrierWord after;   // word installed by it
  bool released_barrier = false;
};

/// First half of an arrival: the word read and the member count taken
/// against it. Split out so scripted tests can interleave the two steps.
struct ArrivePlan {
  WorkerId worker;
  BarrierWord observed;
  std::uint32_t active;
};

/// Dynamic group barrier whose membership can shrink (and grow) while
/// members wait. All three counters change only through cas128 on the
/// packed word; the participation vector holds one slot per worker.
///
/// Any membership change bumps the membership sequence and zeroes the
/// waiting count in the same cas, cancelling every pending wait at once.
/// A removal bumps both before and after clearing the slot: the first bump
/// discards the arrival of a member that died while waiting (it can no
/// longer retract it), the second discards arrivals that counted members
/// before the slot was cleared. A release is therefore always decided on
/// the member count in force at its cas.
class GroupBarrier {
 public:
  static GroupBarrier create(Pool& pool, std::uint32_t max_members);
  static GroupBarrier attach(Pool& pool, PoolAddress addr) { return GroupBarrier(pool, addr); }

  PoolAddress address() const noexcept { return base_; }
  std::uint32_t max_members() const;
  BarrierWord word() const;
  bool is_member(WorkerId w) const;
  std::uint32_t count_active() const;

  /// Sets the slot, then bumps the membership sequence.
  void join(WorkerId w);
  /// Bump, clear the slot, bump. Returns false (and changes nothing) if
  /// `removed` was not a member.
  bool remove(WorkerId removed);

  /// Counts members and increments `waiting`; the arrival that makes waiting
  /// equal the member count releases instead. When `expected_membership` is
  /// given and differs from the current membership sequence, returns
  /// nullopt without arriving.
  std::optional<ArriveTicket> arrive(WorkerId w, std::optional<std::uint64_t> expected_membership = std::nullopt);
  /// Released wins over a concurrent membership change.
  BarrierPoll poll(const ArriveTicket& ticket) const;
  /// Withdraws a pending arrival. Returns waiting if withdrawn, otherwise
  /// the outcome that overtook it.
  BarrierPoll retract(const ArriveTicket& ticket);

  /// Arrive then spin. `on_spin` runs between observations and may return
  /// true to request retracting the wait (e.g. new work appeared); in that
  /// case nullopt is returned if the retraction won.
  std::optional<BarrierOutcome> arrive_and_wait(WorkerId w, const std::function<bool()>& on_spin = {});

  // Step-level primitives used by arrive/remove, exposed for scripted
  // interleaving tests.
  ArrivePlan prepare_arrive(WorkerId w) const;
  std::optional<ArriveTicket> commit_arrive(const ArrivePlan& plan);
  bool remove_clear_slot(WorkerId removed);
  void bump_membership();  // membership_seq + 1, waiting = 0

 private:
  GroupBarrier(Pool& pool, PoolAddress base) : pool_(&pool), base_(base) {}
  PoolAddress member_addr(WorkerId w) const;

  Pool* pool_;
  PoolAddress base_;
};

}  // namespace modc
