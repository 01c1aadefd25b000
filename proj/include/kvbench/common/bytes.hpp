#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace kvbench {

using Bytes = std::vector<std::byte>;
using ByteView = std::span<const std::byte>;
using MutableByteView = std::span<std::byte>;

static_assert(std::endian::native == std::endian::little,
              "on-disk and envelope formats are little-endian and written with memcpy");

template <typename T>
inline void store_le(std::byte* dst, T value) noexcept {
  std::memcpy(dst, &value, sizeof(T));
}

template <typename T>
inline T load_le(const std::byte* src) noexcept {
  T value;
  std::memcpy(&value, src, sizeof(T));
  return value;
}

inline ByteView as_bytes(const std::string_view s) noexcept {
  return {reinterpret_cast<const std::byte*>(s.data()), s.size()};
}

inline bool equal_bytes(ByteView a, ByteView b) noexcept {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size()) == 0);
}

// murmur3 fmix64. Full avalanche; used for slot hashing and key mixing.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

constexpr std::uint64_t next_pow2(std::uint64_t x) noexcept { return x <= 1 ? 1 : std::bit_ceil(x); }

}  // namespace kvbench
