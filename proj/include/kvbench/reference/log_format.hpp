#pragma once

// Per-thread log `log.<tid>`: a sequence of records, each a 32-byte header
// followed by `span` value bytes.
//
//   0  u32 magic      'KVRL'
//   4  u32 crc32      over header bytes [8, 32) then the first `len` value bytes
//   8  u64 key
//   16 u64 stamp      global write order; recovery keeps the highest per key
//   24 u16 len        current value length (may shrink in place)
//   26 u16 span       value bytes reserved
//   28 u8  kind       1 value, 2 inline (8-byte meta word), 3 tombstone
//   29 u8[3] zero
//
// A slot's log pointer offset names the first value byte, i.e. header + 32.
//
// Checkpoint `ckpt.<n>`:
//   "KVCKPT01" u32 version u32 threads u64 capacity u64 clock u64 entries
//   u64 flush_mark[threads]  (key u64, meta u64)[entries]  u32 crc32 of all preceding bytes

#include <cstdint>
#include <cstring>

#include "kvbench/common/bytes.hpp"
#include "kvbench/common/files.hpp"

namespace kvbench::logfmt {

inline constexpr std::uint32_t kMagic = 0x4c52564b;  // "KVRL"
inline constexpr std::size_t kHeaderBytes = 32;

enum class Kind : std::uint8_t { value = 1, inline_value = 2, tombstone = 3 };

struct RecordHeader {
  std::uint64_t key = 0;
  std::uint64_t stamp = 0;
  std::uint16_t len = 0;
  std::uint16_t span = 0;
  Kind kind = Kind::value;
};

inline void encode(std::byte* h, const RecordHeader& r) noexcept {
  store_le<std::uint32_t>(h, kMagic);
  store_le<std::uint32_t>(h + 4, 0);
  store_le<std::uint64_t>(h + 8, r.key);
  store_le<std::uint64_t>(h + 16, r.stamp);
  store_le<std::uint16_t>(h + 24, r.len);
  store_le<std::uint16_t>(h + 26, r.span);
  h[28] = static_cast<std::byte>(r.kind);
  h[29] = h[30] = h[31] = std::byte{0};
}

inline std::uint32_t record_crc(const std::byte* h, ByteView value) noexcept {
  return crc32_of(value, crc32_of(ByteView(h + 8, kHeaderBytes - 8)));
}

inline void seal(std::byte* h, ByteView value) noexcept { store_le<std::uint32_t>(h + 4, record_crc(h, value)); }

inline bool decode(const std::byte* h, RecordHeader& r) noexcept {
  if (load_le<std::uint32_t>(h) != kMagic) return false;
  r.key = load_le<std::uint64_t>(h + 8);
  r.stamp = load_le<std::uint64_t>(h + 16);
  r.len = load_le<std::uint16_t>(h + 24);
  r.span = load_le<std::uint16_t>(h + 26);
  r.kind = static_cast<Kind>(h[28]);
  if (r.len > r.span) return false;
  switch (r.kind) {
    case Kind::value: return r.len >= 8;
    case Kind::inline_value: return r.span == 8 && r.len == 8;
    case Kind::tombstone: return r.span == 0;
  }
  return false;
}

inline constexpr char kCheckpointMagic[8] = {'K', 'V', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace kvbench::logfmt
