#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modc/deque.hpp"
#include "modc/pool.hpp"

namespace modc {

enum class DatumState { pending, ready };
enum class WaitResult { ready_now, parked };

struct PublishResult {
  bool first = false;               // this call flipped the datum to READY
  std::vector<TaskRef> released;    // waiters whose last pending input this was
};

/// Pool-resident table of named data items. Names resolve at runtime, a
/// datum starts PENDING and flips to READY exactly once, and tasks can park
/// on pending names until they are published.
///
/// Open addressing with linear probing; a slot is claimed by cas on its
/// name fingerprint. Nothing is ever removed.
class NameStore {
 public:
  struct Handle {
    PoolAddress slot;
    friend constexpr bool operator==(Handle, Handle) = default;
  };

  static constexpr std::uint64_t default_slots = std::uint64_t{1} << 16;

  static NameStore create(Pool& pool, std::uint64_t slots = default_slots);
  static NameStore attach(Pool& pool, PoolAddress addr) { return NameStore(pool, addr); }

  PoolAddress address() const noexcept { return base_; }
  std::uint64_t entries() const;

  /// Idempotent; concurrent declares of one name converge on one slot.
  Handle declare(std::string_view name);
  std::optional<Handle> find(std::string_view name) const;
  DatumState state(Handle h) const;

  /// Writes the payload to fresh pool space and flips PENDING -> READY.
  /// A repeat publish (re-run of an idempotent task) is a no-op, except
  /// that a payload of different length raises ConflictingPublish. With
  /// `compare_content` the bytes must match as well.
  PublishResult publish(std::string_view name, std::span<const std::byte> payload, bool compare_content = false);

  /// READY payload, viewed in place. Never returns a partially written
  /// payload: the state flip is the publication point.
  std::optional<std::span<const std::byte>> get(std::string_view name) const;
  std::optional<std::span<const std::byte>> get(Handle h) const;

  /// Counts the not-yet-READY inputs into the 64-bit word at `counter` and
  /// parks `task` on each of them. The publish that brings the counter to
  /// zero reports the task in PublishResult::released; if nothing is
  /// pending the caller gets ready_now and must schedule it itself.
  WaitResult register_waiter(TaskRef task, PoolAddress counter, std::span<const std::string> inputs);

 private:
  NameStore(Pool& pool, PoolAddress base) : pool_(&pool), base_(base) {}
  std::uint64_t slots() const;
  PoolAddress slot_addr(std::uint64_t index) const;
  bool name_matches(PoolAddress slot, std::string_view name) const;
  std::optional<Handle> probe(std::string_view name, bool create);

  Pool* pool_;
  PoolAddress base_;
};

std::uint64_t name_fingerprint(std::string_view name) noexcept;

}  // namespace modc
