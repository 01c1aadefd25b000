#pragma once

// Keys and values the stores cannot second-guess.
//
// Logical keys are mapped through a per-run keyed permutation before any store
// sees them. Values are envelopes: a header naming (key, thread, seq, length),
// a keyed-PRF fill and a keyed checksum. Without the run's fill key a store can
// neither regenerate a value nor forge one that validates.

#include <sodium.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "kvbench/common/bytes.hpp"
#include "kvbench/common/errors.hpp"

namespace kvbench {

using Key = std::uint64_t;
using ThreadId = std::uint16_t;
using Block16 = std::array<std::byte, 16>;

inline void ensure_sodium() {
  static const int rc = ::sodium_init();
  if (rc < 0) throw Error("libsodium initialisation failed");
}

inline std::uint64_t siphash64(const Block16& key, ByteView data) noexcept {
  static_assert(crypto_shorthash_siphash24_KEYBYTES == 16 && crypto_shorthash_siphash24_BYTES == 8);
  unsigned char out[8];
  ::crypto_shorthash_siphash24(out, reinterpret_cast<const unsigned char*>(data.data()), data.size(),
                               reinterpret_cast<const unsigned char*>(key.data()));
  std::uint64_t v;
  std::memcpy(&v, out, 8);
  return v;
}

struct RunSecret {
  Block16 scramble_key{};
  Block16 fill_key{};
  Block16 run_tag{};

  static RunSecret fresh() {
    ensure_sodium();
    RunSecret s;
    ::randombytes_buf(s.scramble_key.data(), 16);
    ::randombytes_buf(s.fill_key.data(), 16);
    ::randombytes_buf(s.run_tag.data(), 16);
    return s;
  }

  // Reproducible secret. Only for debugging a specific run: anyone who knows
  // the seed can rebuild every value.
  static RunSecret from_seed(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RunSecret s;
    for (Block16* b : {&s.scramble_key, &s.fill_key, &s.run_tag}) {
      for (std::size_t i = 0; i < 16; i += 8) store_le<std::uint64_t>(b->data() + i, rng());
    }
    return s;
  }

  bool operator==(const RunSecret&) const = default;
};

enum class Verdict : std::uint8_t { ok, key_mismatch, checksum_mismatch, length_mismatch };

constexpr std::string_view verdict_name(Verdict v) noexcept {
  switch (v) {
    case Verdict::ok: return "OK";
    case Verdict::key_mismatch: return "KeyMismatch";
    case Verdict::checksum_mismatch: return "ChecksumMismatch";
    case Verdict::length_mismatch: return "LengthMismatch";
  }
  return "?";
}

struct Validation {
  Verdict verdict = Verdict::ok;
  std::uint32_t expected_len = 0;  // set for length_mismatch
  bool ok() const noexcept { return verdict == Verdict::ok; }
  explicit operator bool() const noexcept { return ok(); }
};

struct EnvelopeHeader {
  Key key = 0;
  ThreadId thread_id = 0;
  std::uint64_t seq = 0;
  std::uint16_t payload_len = 0;
  bool operator==(const EnvelopeHeader&) const = default;
};

// Layout: key(8) tid(2) seq(8) len(2) fill(len-28) checksum(8).
inline constexpr std::size_t kHeaderBytes = 20;
inline constexpr std::size_t kChecksumBytes = 8;
inline constexpr std::size_t kFullEnvelopeBytes = kHeaderBytes + kChecksumBytes;

class ValueFabric {
 public:
  explicit ValueFabric(const RunSecret& secret) {
    ensure_sodium();
    for (int i = 0; i < kRounds; ++i) {
      const std::array<std::byte, 6> tag{std::byte{'r'}, std::byte{'o'}, std::byte{'u'},
                                         std::byte{'n'}, std::byte{'d'}, std::byte(i)};
      round_keys_[i] = siphash64(secret.scramble_key, tag);
    }
    checksum_key_ = derive_block(secret.fill_key, "checksum");
    nonce_key_ = derive_block(secret.fill_key, "nonce");
    std::memcpy(stream_key_.data(), secret.fill_key.data(), 16);
    std::memcpy(stream_key_.data() + 16, secret.run_tag.data(), 16);
    seed_key_ = derive_block(secret.run_tag, "seed");
  }

  Key scramble(Key logical) const noexcept {
    std::uint32_t l = static_cast<std::uint32_t>(logical >> 32);
    std::uint32_t r = static_cast<std::uint32_t>(logical);
    for (int i = 0; i < kRounds; ++i) {
      const std::uint32_t next = l ^ round(r, round_keys_[i]);
      l = r;
      r = next;
    }
    return (static_cast<std::uint64_t>(l) << 32) | r;
  }

  Key unscramble(Key scrambled) const noexcept {
    std::uint32_t l = static_cast<std::uint32_t>(scrambled >> 32);
    std::uint32_t r = static_cast<std::uint32_t>(scrambled);
    for (int i = kRounds - 1; i >= 0; --i) {
      const std::uint32_t prev = r ^ round(l, round_keys_[i]);
      r = l;
      l = prev;
    }
    return (static_cast<std::uint64_t>(l) << 32) | r;
  }

  // Writes the envelope for an already-scrambled key into out (out.size() is
  // the payload length).
  void write_envelope(MutableByteView out, Key key, ThreadId tid, std::uint64_t seq) const {
    const std::size_t len = out.size();
    if (len > 65535) throw LengthError("payload length " + std::to_string(len) + " exceeds 65535");
    if (len == 0) return;
    std::array<std::byte, kHeaderBytes> h;
    encode_header(h.data(), key, tid, seq, static_cast<std::uint16_t>(len));
    if (len >= kFullEnvelopeBytes) {
      std::memcpy(out.data(), h.data(), kHeaderBytes);
      const std::size_t fill = len - kFullEnvelopeBytes;
      if (fill > 0) fill_bytes(out.data() + kHeaderBytes, fill, key, tid, seq);
      store_le<std::uint64_t>(out.data() + len - 8, siphash64(checksum_key_, out.first(len - 8)));
      return;
    }
    const std::size_t c = std::min<std::size_t>(8, len);
    const std::size_t p = len - c;
    std::memcpy(out.data(), h.data(), p);
    const std::uint64_t sum = short_checksum(out.first(p), key, static_cast<std::uint16_t>(len));
    std::memcpy(out.data() + p, &sum, c);
  }

  Bytes make_envelope_for_key(Key key, ThreadId tid, std::uint64_t seq, std::size_t len) const {
    if (len > 65535) throw LengthError("payload length " + std::to_string(len) + " exceeds 65535");
    Bytes out(len);
    write_envelope(out, key, tid, seq);
    return out;
  }

  Bytes make_envelope(Key logical_key, ThreadId tid, std::uint64_t seq, std::size_t len) const {
    return make_envelope_for_key(scramble(logical_key), tid, seq, len);
  }

  Validation validate(ByteView bytes, Key probed_key) const noexcept {
    const std::size_t len = bytes.size();
    if (len == 0) return {};
    if (len > 65535) return {Verdict::length_mismatch, 0};
    if (len >= kFullEnvelopeBytes) {
      const auto field = load_le<std::uint16_t>(bytes.data() + 18);
      if (field != len) return {Verdict::length_mismatch, field};
      if (siphash64(checksum_key_, bytes.first(len - 8)) != load_le<std::uint64_t>(bytes.data() + len - 8))
        return {Verdict::checksum_mismatch, 0};
      if (load_le<Key>(bytes.data()) != probed_key) return {Verdict::key_mismatch, 0};
      return {};
    }
    const std::size_t c = std::min<std::size_t>(8, len);
    const std::size_t p = len - c;
    const Key key = p >= 8 ? load_le<Key>(bytes.data()) : probed_key;
    if (p < 8 && std::memcmp(&probed_key, bytes.data(), p) != 0) return {Verdict::key_mismatch, 0};
    const std::uint64_t sum = short_checksum(bytes.first(p), key, static_cast<std::uint16_t>(len));
    if (std::memcmp(&sum, bytes.data() + p, c) != 0) return {Verdict::checksum_mismatch, 0};
    if (key != probed_key) return {Verdict::key_mismatch, 0};
    return {};
  }

  // Header fields present in the bytes. Fields cut off by a short envelope
  // are left zero.
  static EnvelopeHeader decode_header(ByteView bytes) noexcept {
    std::array<std::byte, kHeaderBytes> h{};
    const std::size_t len = bytes.size();
    const std::size_t present =
        len >= kFullEnvelopeBytes ? kHeaderBytes : len - std::min<std::size_t>(8, len);
    std::memcpy(h.data(), bytes.data(), present);
    return {load_le<Key>(h.data()), load_le<ThreadId>(h.data() + 8), load_le<std::uint64_t>(h.data() + 10),
            load_le<std::uint16_t>(h.data() + 18)};
  }

  // Per-(purpose, thread) seed for sub-generators.
  std::uint64_t derive_seed(std::string_view domain, std::uint64_t tid) const noexcept {
    std::byte buf[64 + 8];
    const std::size_t n = std::min<std::size_t>(domain.size(), 64);
    std::memcpy(buf, domain.data(), n);
    store_le<std::uint64_t>(buf + n, tid);
    return siphash64(seed_key_, ByteView(buf, n + 8));
  }

 private:
  static constexpr int kRounds = 4;

  static std::uint32_t round(std::uint32_t half, std::uint64_t k) noexcept {
    return static_cast<std::uint32_t>(mix64(half ^ k) >> 32);
  }

  static Block16 derive_block(const Block16& key, std::string_view label) noexcept {
    Block16 out;
    std::byte buf[32];
    const std::size_t n = std::min<std::size_t>(label.size(), 31);
    std::memcpy(buf, label.data(), n);
    buf[n] = std::byte{0};
    store_le<std::uint64_t>(out.data(), siphash64(key, ByteView(buf, n + 1)));
    buf[n] = std::byte{1};
    store_le<std::uint64_t>(out.data() + 8, siphash64(key, ByteView(buf, n + 1)));
    return out;
  }

  static void encode_header(std::byte* h, Key key, ThreadId tid, std::uint64_t seq, std::uint16_t len) noexcept {
    store_le<Key>(h, key);
    store_le<ThreadId>(h + 8, tid);
    store_le<std::uint64_t>(h + 10, seq);
    store_le<std::uint16_t>(h + 18, len);
  }

  void fill_bytes(std::byte* dst, std::size_t n, Key key, ThreadId tid, std::uint64_t seq) const noexcept {
    std::byte id[18];
    store_le<Key>(id, key);
    store_le<ThreadId>(id + 8, tid);
    store_le<std::uint64_t>(id + 10, seq);
    unsigned char nonce[8];
    const std::uint64_t nv = siphash64(nonce_key_, ByteView(id, sizeof id));
    std::memcpy(nonce, &nv, 8);
    ::crypto_stream_chacha20(reinterpret_cast<unsigned char*>(dst), n, nonce,
                             reinterpret_cast<const unsigned char*>(stream_key_.data()));
  }

  std::uint64_t short_checksum(ByteView prefix, Key key, std::uint16_t len) const noexcept {
    std::byte buf[kHeaderBytes + 8 + 2];
    std::memcpy(buf, prefix.data(), prefix.size());
    store_le<Key>(buf + prefix.size(), key);
    store_le<std::uint16_t>(buf + prefix.size() + 8, len);
    return siphash64(checksum_key_, ByteView(buf, prefix.size() + 10));
  }

  std::array<std::uint64_t, kRounds> round_keys_{};
  Block16 checksum_key_{};
  Block16 nonce_key_{};
  Block16 seed_key_{};
  std::array<std::byte, 32> stream_key_{};
};

}  // namespace kvbench
