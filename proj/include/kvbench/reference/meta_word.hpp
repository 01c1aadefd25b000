#pragma once

// 64-bit slot state.
//
//   63:62  tag   00 empty (whole word zero), 01 inline, 10 log pointer, 11 tombstone
//   inline:  61:59 len (0..7), 58:56 spare, 55:0 value bytes, little-endian
//   logptr:  61:56 thread id, 55:16 absolute log offset, 15:0 size
//
// A log pointer with size 0 never describes a value (anything shorter than 8
// bytes goes inline), so that pattern is free to mark a slot as locked.

#include <cstdint>
#include <cstring>

#include "kvbench/common/bytes.hpp"

namespace kvbench::meta {

enum class Tag : std::uint8_t { empty = 0, inline_value = 1, log_ptr = 2, tombstone = 3 };

inline constexpr std::uint64_t kEmpty = 0;
inline constexpr std::uint64_t kTombstone = 3ULL << 62;
inline constexpr std::uint64_t kBusy = 2ULL << 62;
inline constexpr std::uint64_t kMaxOffset = (1ULL << 40) - 1;
inline constexpr std::uint32_t kMaxThreadId = 63;
inline constexpr std::size_t kMaxInline = 7;

constexpr Tag tag(std::uint64_t m) noexcept { return static_cast<Tag>(m >> 62); }
constexpr bool is_busy(std::uint64_t m) noexcept { return m == kBusy; }

constexpr std::uint64_t make_log_ptr(std::uint32_t tid, std::uint64_t off, std::uint16_t size) noexcept {
  return (2ULL << 62) | (static_cast<std::uint64_t>(tid & 63) << 56) | ((off & kMaxOffset) << 16) | size;
}
constexpr std::uint32_t log_tid(std::uint64_t m) noexcept { return static_cast<std::uint32_t>((m >> 56) & 63); }
constexpr std::uint64_t log_off(std::uint64_t m) noexcept { return (m >> 16) & kMaxOffset; }
constexpr std::uint16_t log_size(std::uint64_t m) noexcept { return static_cast<std::uint16_t>(m & 0xffff); }

inline std::uint64_t make_inline(ByteView v) noexcept {
  std::uint64_t payload = 0;
  if (!v.empty()) std::memcpy(&payload, v.data(), v.size());
  return (1ULL << 62) | (static_cast<std::uint64_t>(v.size()) << 59) | (payload & ((1ULL << 56) - 1));
}
constexpr std::size_t inline_len(std::uint64_t m) noexcept { return static_cast<std::size_t>((m >> 59) & 7); }
inline void inline_copy(std::uint64_t m, std::byte* out) noexcept {
  const std::uint64_t payload = m & ((1ULL << 56) - 1);
  std::memcpy(out, &payload, inline_len(m));
}

}  // namespace kvbench::meta
