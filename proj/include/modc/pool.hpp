#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <string_view>
#include <type_traits>

#include "modc/error.hpp"

namespace modc {

/// Byte offset into the pool's logical address space. Offset 0 is the pool
/// header and never returned by alloc, so a zero address doubles as null.
struct PoolAddress {
  std::uint64_t offset = 0;

  constexpr bool is_null() const noexcept { return offset == 0; }
  constexpr PoolAddress operator+(std::uint64_t delta) const noexcept { return {offset + delta}; }
  friend constexpr bool operator==(PoolAddress, PoolAddress) = default;
  friend constexpr auto operator<=>(PoolAddress, PoolAddress) = default;
};

inline constexpr PoolAddress null_address{};

struct Word128 {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;
  friend constexpr bool operator==(const Word128&, const Word128&) = default;
};

template <typename W>
struct CasResult {
  bool success;
  W observed;
};

/// Emulated disaggregated memory: one flat region addressable by every
/// worker in the process. Workers may halt at any moment; nothing stored here
/// is owned by a worker, so the contents outlive them.
///
/// All atomics are sequentially consistent. Plain reads and writes are
/// memcpy; callers must not race them against atomics on the same bytes.
class Pool {
 public:
  static constexpr std::uint64_t default_capacity = std::uint64_t{4} << 30;

  explicit Pool(std::uint64_t capacity = default_capacity);
  ~Pool();

  Pool(const Pool&) = delete;
  Pool& operator=(const Pool&) = delete;

  std::uint64_t capacity() const noexcept { return capacity_; }
  /// Bytes handed out so far, header included.
  std::uint64_t used() const;

  /// Bump allocation; zeroed, never reused. Thread safe.
  PoolAddress alloc(std::uint64_t size, std::uint64_t align = 8);

  void read(PoolAddress addr, std::span<std::byte> out) const;
  void write(PoolAddress addr, std::span<const std::byte> bytes);

  /// Direct view for bulk access to immutable or privately-owned regions.
  std::span<std::byte> bytes(PoolAddress addr, std::uint64_t len);
  std::span<const std::byte> bytes(PoolAddress addr, std::uint64_t len) const;

  template <typename T>
  std::span<T> array(PoolAddress addr, std::uint64_t count) {
    static_assert(std::is_trivially_copyable_v<T>);
    check_range(addr, count * sizeof(T));
    check_alignment(addr, alignof(T));
    return {reinterpret_cast<T*>(base_ + addr.offset), count};
  }
  template <typename T>
  std::span<const T> array(PoolAddress addr, std::uint64_t count) const {
    static_assert(std::is_trivially_copyable_v<T>);
    check_range(addr, count * sizeof(T));
    check_alignment(addr, alignof(T));
    return {reinterpret_cast<const T*>(base_ + addr.offset), count};
  }

  std::uint64_t load64(PoolAddress addr) const;
  void store64(PoolAddress addr, std::uint64_t value);
  CasResult<std::uint64_t> cas64(PoolAddress addr, std::uint64_t expected, std::uint64_t desired);
  std::uint64_t faa64(PoolAddress addr, std::int64_t delta);
  std::uint64_t exchange64(PoolAddress addr, std::uint64_t desired);

  Word128 load128(PoolAddress addr) const;
  CasResult<Word128> cas128(PoolAddress addr, Word128 expected, Word128 desired);

  /// Copies `bytes` into freshly allocated pool space.
  PoolAddress put(std::span<const std::byte> bytes, std::uint64_t align = 8);
  PoolAddress put(std::string_view text) {
    return put(std::as_bytes(std::span(text.data(), text.size())), 1);
  }

 private:
  void check_range(PoolAddress addr, std::uint64_t len) const;
  static void check_alignment(PoolAddress addr, std::uint64_t align);

  std::uint64_t capacity_;
  std::byte* base_;
};

}  // namespace modc
