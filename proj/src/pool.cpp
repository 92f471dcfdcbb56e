#include "modc/pool.hpp"

#include <sys/mman.h>

#include <atomic>
#include <bit>
#include <string>

namespace modc {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::out_of_pool_memory: return "OutOfPoolMemory";
    case Errc::out_of_bounds: return "OutOfBounds";
    case Errc::misaligned_address: return "MisalignedAddress";
    case Errc::queue_full: return "QueueFull";
    case Errc::not_owner: return "NotOwner";
    case Errc::already_member: return "AlreadyMember";
    case Errc::not_member: return "NotMember";
    case Errc::conflicting_publish: return "ConflictingPublish";
    case Errc::duplicate_fn_id: return "DuplicateFnId";
    case Errc::unknown_function: return "UnknownFunction";
    case Errc::unknown_job: return "UnknownJob";
    case Errc::bad_probabilities: return "BadProbabilities";
    case Errc::endpoint_out_of_range: return "EndpointOutOfRange";
    case Errc::config_error: return "ConfigError";
    case Errc::table_full: return "TableFull";
    case Errc::task_fault: return "TaskFault";
  }
  return "Unknown";
}

namespace {

// The allocation cursor lives in the pool itself so any surviving worker
// can keep allocating.
constexpr PoolAddress cursor_addr{0};
constexpr std::uint64_t header_size = 64;

using u128 = unsigned __int128;

u128 pack(Word128 w) { return (static_cast<u128>(w.hi) << 64) | w.lo; }
Word128 unpack(u128 v) {
  return {static_cast<std::uint64_t>(v >> 64), static_cast<std::uint64_t>(v)};
}

}  // namespace

Pool::Pool(std::uint64_t capacity) : capacity_(capacity), base_(nullptr) {
  if (capacity < header_size + 64) throw Error(Errc::config_error, "pool capacity too small");
  // Anonymous mappings are zero-filled and only committed on first touch, so
  // a large nominal capacity costs nothing until used.
  void* p = ::mmap(nullptr, capacity, PROT_READ | PROT_WRITE,
                   MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0);
  if (p == MAP_FAILED) throw Error(Errc::out_of_pool_memory, "mmap of pool region failed");
  base_ = static_cast<std::byte*>(p);
  store64(cursor_addr, header_size);
}

Pool::~Pool() { ::munmap(base_, capacity_); }

std::uint64_t Pool::used() const { return load64(cursor_addr); }

PoolAddress Pool::alloc(std::uint64_t size, std::uint64_t align) {
  if (size == 0) throw Error(Errc::out_of_bounds, "zero-sized allocation");
  if (!std::has_single_bit(align)) throw Error(Errc::misaligned_address, "alignment not a power of two");
  if (size > capacity_) throw Error(Errc::out_of_pool_memory, "request exceeds capacity");
  const std::uint64_t span = size + align - 1;
  const std::uint64_t old = faa64(cursor_addr, static_cast<std::int64_t>(span));
  const std::uint64_t start = (old + align - 1) & ~(align - 1);
  if (old > capacity_ || start + size > capacity_) {
    throw Error(Errc::out_of_pool_memory,
                "requested " + std::to_string(size) + " bytes, capacity " + std::to_string(capacity_));
  }
  return PoolAddress{start};
}

void Pool::check_range(PoolAddress addr, std::uint64_t len) const {
  if (addr.offset > capacity_ || len > capacity_ - addr.offset) {
    throw Error(Errc::out_of_bounds, "access [" + std::to_string(addr.offset) + ", +" +
                                         std::to_string(len) + ") beyond capacity");
  }
}

void Pool::check_alignment(PoolAddress addr, std::uint64_t align) {
  if (addr.offset % align != 0) {
    throw Error(Errc::misaligned_address,
                "offset " + std::to_string(addr.offset) + " not " + std::to_string(align) + "-aligned");
  }
}

void Pool::read(PoolAddress addr, std::span<std::byte> out) const {
  check_range(addr, out.size());
  std::memcpy(out.data(), base_ + addr.offset, out.size());
}

void Pool::write(PoolAddress addr, std::span<const std::byte> bytes) {
  check_range(addr, bytes.size());
  std::memcpy(base_ + addr.offset, bytes.data(), bytes.size());
}

std::span<std::byte> Pool::bytes(PoolAddress addr, std::uint64_t len) {
  check_range(addr, len);
  return {base_ + addr.offset, len};
}

std::span<const std::byte> Pool::bytes(PoolAddress addr, std::uint64_t len) const {
  check_range(addr, len);
  return {base_ + addr.offset, len};
}

std::uint64_t Pool::load64(PoolAddress addr) const {
  check_range(addr, 8);
  check_alignment(addr, 8);
  auto* p = reinterpret_cast<std::uint64_t*>(base_ + addr.offset);
  return std::atomic_ref<std::uint64_t>(*p).load();
}

void Pool::store64(PoolAddress addr, std::uint64_t value) {
  check_range(addr, 8);
  check_alignment(addr, 8);
  auto* p = reinterpret_cast<std::uint64_t*>(base_ + addr.offset);
  std::atomic_ref<std::uint64_t>(*p).store(value);
}

CasResult<std::uint64_t> Pool::cas64(PoolAddress addr, std::uint64_t expected, std::uint64_t desired) {
  check_range(addr, 8);
  check_alignment(addr, 8);
  auto* p = reinterpret_cast<std::uint64_t*>(base_ + addr.offset);
  std::uint64_t observed = expected;
  const bool ok = std::atomic_ref<std::uint64_t>(*p).compare_exchange_strong(observed, desired);
  return {ok, ok ? expected : observed};
}

std::uint64_t Pool::faa64(PoolAddress addr, std::int64_t delta) {
  check_range(addr, 8);
  check_alignment(addr, 8);
  auto* p = reinterpret_cast<std::uint64_t*>(base_ + addr.offset);
  return std::atomic_ref<std::uint64_t>(*p).fetch_add(static_cast<std::uint64_t>(delta));
}

std::uint64_t Pool::exchange64(PoolAddress addr, std::uint64_t desired) {
  check_range(addr, 8);
  check_alignment(addr, 8);
  auto* p = reinterpret_cast<std::uint64_t*>(base_ + addr.offset);
  return std::atomic_ref<std::uint64_t>(*p).exchange(desired);
}

// 16-byte atomics go through the __atomic builtins. With -mcx16 libatomic
// dispatches to cmpxchg16b; on hardware without it libatomic falls back to a
// lock table that is consistent across every 16-byte operation, so loads
// and CASes on the same word stay linearizable either way.
Word128 Pool::load128(PoolAddress addr) const {
  check_range(addr, 16);
  check_alignment(addr, 16);
  auto* p = reinterpret_cast<u128*>(base_ + addr.offset);
  return unpack(__atomic_load_n(p, __ATOMIC_SEQ_CST));
}

CasResult<Word128> Pool::cas128(PoolAddress addr, Word128 expected, Word128 desired) {
  check_range(addr, 16);
  check_alignment(addr, 16);
  auto* p = reinterpret_cast<u128*>(base_ + addr.offset);
  u128 exp = pack(expected);
  const bool ok = __atomic_compare_exchange_n(p, &exp, pack(desired), false, __ATOMIC_SEQ_CST,
                                              __ATOMIC_SEQ_CST);
  return {ok, ok ? expected : unpack(exp)};
}

PoolAddress Pool::put(std::span<const std::byte> bytes, std::uint64_t align) {
  const PoolAddress addr = alloc(bytes.empty() ? 1 : bytes.size(), align);
  if (!bytes.empty()) write(addr, bytes);
  return addr;
}

}  // namespace modc
