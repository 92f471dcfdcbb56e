#include "modc/namestore.hpp"

#include <bit>
#include <cstring>
#include <thread>

namespace modc {

namespace {

// Slot layout (64 bytes).
constexpr std::uint64_t fp_off = 0;
constexpr std::uint64_t name_addr_off = 8;
constexpr std::uint64_t name_len_off = 16;
constexpr std::uint64_t state_off = 24;    // 0 = pending, else payload record address
constexpr std::uint64_t waiters_off = 32;  // 0 = empty, closed_list, or entry address
constexpr std::uint64_t slot_size = 64;

constexpr std::uint64_t closed_list = 1;

// Waiter entry: task @0, counter @8, next @16.
constexpr std::uint64_t entry_size = 24;

}  // namespace

std::uint64_t name_fingerprint(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  h ^= h >> 29;
  return h == 0 ? 1 : h;
}

NameStore NameStore::create(Pool& pool, std::uint64_t slots) {
  if (!std::has_single_bit(slots)) throw Error(Errc::config_error, "name table size must be a power of two");
  const PoolAddress base = pool.alloc(64 + slots * slot_size, 64);
  pool.store64(base, slots);
  return NameStore(pool, base);
}

std::uint64_t NameStore::slots() const { return pool_->load64(base_); }
std::uint64_t NameStore::entries() const { return pool_->load64(base_ + 8); }
PoolAddress NameStore::slot_addr(std::uint64_t index) const { return base_ + 64 + index * slot_size; }

bool NameStore::name_matches(PoolAddress slot, std::string_view name) const {
  // The claimer publishes the name address after writing the bytes.
  std::uint64_t addr;
  while ((addr = pool_->load64(slot + name_addr_off)) == 0) std::this_thread::yield();
  if (pool_->load64(slot + name_len_off) != name.size()) return false;
  const auto stored = pool_->bytes(PoolAddress{addr}, name.size());
  return name.empty() || std::memcmp(stored.data(), name.data(), name.size()) == 0;
}

std::optional<NameStore::Handle> NameStore::probe(std::string_view name, bool create) {
  const std::uint64_t fp = name_fingerprint(name);
  const std::uint64_t n = slots();
  for (std::uint64_t i = 0; i < n; ++i) {
    const PoolAddress slot = slot_addr((fp + i) & (n - 1));
    std::uint64_t seen = pool_->load64(slot + fp_off);
    if (seen == 0) {
      if (!create) return std::nullopt;
      auto claim = pool_->cas64(slot + fp_off, 0, fp);
      if (claim.success) {
        const PoolAddress text = pool_->put(name);
        pool_->store64(slot + name_len_off, name.size());
        pool_->store64(slot + name_addr_off, text.offset);
        pool_->faa64(base_ + 8, 1);
        return Handle{slot};
      }
      seen = claim.observed;
    }
    if (seen == fp && name_matches(slot, name)) return Handle{slot};
  }
  if (!create) return std::nullopt;
  throw Error(Errc::table_full, "name table exhausted while declaring '" + std::string(name) + "'");
}

NameStore::Handle NameStore::declare(std::string_view name) { return *probe(name, true); }

std::optional<NameStore::Handle> NameStore::find(std::string_view name) const {
  return const_cast<NameStore*>(this)->probe(name, false);
}

DatumState NameStore::state(Handle h) const {
  return pool_->load64(h.slot + state_off) == 0 ? DatumState::pending : DatumState::ready;
}

std::optional<std::span<const std::byte>> NameStore::get(Handle h) const {
  const std::uint64_t record = pool_->load64(h.slot + state_off);
  if (record == 0) return std::nullopt;
  const PoolAddress addr{pool_->load64(PoolAddress{record})};
  const std::uint64_t len = pool_->load64(PoolAddress{record} + 8);
  return pool_->bytes(addr, len);
}

std::optional<std::span<const std::byte>> NameStore::get(std::string_view name) const {
  auto h = find(name);
  if (!h) return std::nullopt;
  return get(*h);
}

PublishResult NameStore::publish(std::string_view name, std::span<const std::byte> payload, bool compare_content) {
  const Handle h = declare(name);
  auto check_duplicate = [&](std::uint64_t record) {
    const std::uint64_t len = pool_->load64(PoolAddress{record} + 8);
    bool same = len == payload.size();
    if (same && compare_content && len > 0) {
      const auto stored = pool_->bytes(PoolAddress{pool_->load64(PoolAddress{record})}, len);
      same = std::memcmp(stored.data(), payload.data(), len) == 0;
    }
    if (!same) {
      throw Error(Errc::conflicting_publish,
                  "'" + std::string(name) + "' republished with a different payload (task not idempotent?)");
    }
    return PublishResult{};
  };

  if (const std::uint64_t record = pool_->load64(h.slot + state_off); record != 0) return check_duplicate(record);

  const PoolAddress data = pool_->put(payload);
  const PoolAddress record = pool_->alloc(16, 16);
  pool_->store64(record, data.offset);
  pool_->store64(record + 8, payload.size());
  auto flip = pool_->cas64(h.slot + state_off, 0, record.offset);
  if (!flip.success) return check_duplicate(flip.observed);

  PublishResult result{true, {}};
  std::uint64_t entry = pool_->exchange64(h.slot + waiters_off, closed_list);
  while (entry != 0 && entry != closed_list) {
    const PoolAddress e{entry};
    const PoolAddress counter{pool_->load64(e + 8)};
    if (pool_->faa64(counter, -1) == 1) result.released.push_back(TaskRef{PoolAddress{pool_->load64(e)}});
    entry = pool_->load64(e + 16);
  }
  return result;
}

WaitResult NameStore::register_waiter(TaskRef task, PoolAddress counter, std::span<const std::string> inputs) {
  // One extra count guards against a publish releasing the task before
  // every input has been inspected.
  pool_->store64(counter, inputs.size() + 1);
  for (const std::string& name : inputs) {
    const Handle h = declare(name);
    if (state(h) == DatumState::ready) {
      pool_->faa64(counter, -1);
      continue;
    }
    const PoolAddress e = pool_->alloc(entry_size, 8);
    pool_->store64(e, task.addr.offset);
    pool_->store64(e + 8, counter.offset);
    std::uint64_t head = pool_->load64(h.slot + waiters_off);
    for (;;) {
      if (head == closed_list) {
        // Published between our state check and the push.
        pool_->faa64(counter, -1);
        break;
      }
      pool_->store64(e + 16, head);
      auto r = pool_->cas64(h.slot + waiters_off, head, e.offset);
      if (r.success) break;
      head = r.observed;
    }
  }
  return pool_->faa64(counter, -1) == 1 ? WaitResult::ready_now : WaitResult::parked;
}

}  // namespace modc
