#pragma once

// Stores that cheat. Each reproduces one known shortcut so the gate can be
// shown to catch it. The first four are the reference store with a single
// policy switch flipped; the last two replace the store outright.

#include <array>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kvbench/reference/reference_store.hpp"
#include "kvbench/store_api.hpp"
#include "kvbench/value_fabric.hpp"

namespace kvbench {

inline constexpr std::array<std::string_view, 6> kGalleryIds{
    "I1-truncated-hash", "I2-cross-thread-ring", "I3-same-size-inplace",
    "II1-flat-array",    "II2-bitmap-impostor",  "II3-value-regen"};

// The gate test each variant must fail and the violation kind that names its
// shortcut. An empty kind accepts any violation in that test.
struct GalleryExpectation {
  std::string_view id;
  std::string_view test;
  std::string_view kind;
};

inline constexpr std::array<GalleryExpectation, 6> kGalleryExpectations{{
    {"I1-truncated-hash", "retention", ""},
    {"I2-cross-thread-ring", "torn_read_stress", ""},
    {"I3-same-size-inplace", "torn_read_stress", ""},
    {"II1-flat-array", "retention", "KeyMismatch"},
    {"II2-bitmap-impostor", "retention", "ChecksumMismatch"},
    {"II3-value-regen", "retention", "ChecksumMismatch"},
}};

struct TruncatedHashPolicy : ReferencePolicy {
  static constexpr const char* kName = "gallery:I1-truncated-hash";
  static constexpr KeyMode key_mode = KeyMode::hash32;
};

struct CrossThreadRingPolicy : ReferencePolicy {
  static constexpr const char* kName = "gallery:I2-cross-thread-ring";
  static constexpr bool cross_thread_ring = true;
};

struct SameSizeInplacePolicy : ReferencePolicy {
  static constexpr const char* kName = "gallery:I3-same-size-inplace";
  static constexpr bool same_size_inplace = true;
};

struct FlatArrayPolicy : ReferencePolicy {
  static constexpr const char* kName = "gallery:II1-flat-array";
  static constexpr KeyMode key_mode = KeyMode::flat;
};

// Remembers one bit per key and makes values up on read.
class BitmapImpostorStore final : public KvStore {
 public:
  explicit BitmapImpostorStore(const StoreConfig& cfg)
      : bits_(next_pow2(std::max<std::uint64_t>(64, 8 * cfg.expected_keys))), words_(bits_ / 64) {}

  std::string name() const override { return "gallery:II2-bitmap-impostor"; }

  Completion read(ThreadId, Key key, ValueBuffer& out) override {
    if (!test(key)) return {Status::not_found, true, {}};
    // Plausible-looking value: right key and length, invented fill and checksum.
    auto v = out.prepare(kGuessLen);
    std::mt19937_64 rng(key);
    for (std::size_t i = 0; i < kGuessLen; i += 8) store_le<std::uint64_t>(v.data() + i, rng());
    store_le<Key>(v.data(), key);
    store_le<std::uint16_t>(v.data() + 18, static_cast<std::uint16_t>(kGuessLen));
    return {Status::found, true, out.view()};
  }
  Completion upsert(ThreadId, Key key, ByteView) override {
    set(key, true);
    return {Status::ok, true, {}};
  }
  Completion rmw(ThreadId tid, Key key, Modifier modifier) override {
    ValueBuffer cur;
    ValueBuffer next;
    if (read(tid, key, cur).status == Status::found) {
      modifier(cur.view(), next);
    } else {
      modifier(std::nullopt, next);
    }
    set(key, true);
    return {Status::ok, true, {}};
  }
  Completion remove(ThreadId, Key key) override {
    const bool had = test(key);
    set(key, false);
    return {had ? Status::ok : Status::not_found, true, {}};
  }
  CheckpointId checkpoint() override { return ++checkpoints_; }
  void simulate_crash(CrashMode) override { crashed_ = true; }
  void recover() override {
    if (!crashed_) throw RecoveryError("recover() without a preceding simulate_crash()");
    crashed_ = false;
  }
  IndicatorCounters snapshot_indicators() const override {
    IndicatorCounters c;
    c.budget_bytes_in_use = words_.size() * 8;
    return c;
  }

 private:
  static constexpr std::size_t kGuessLen = 100;

  std::uint64_t bit_of(Key key) const noexcept { return mix64(key) & (bits_ - 1); }
  bool test(Key key) const noexcept {
    const std::uint64_t b = bit_of(key);
    return (words_[b / 64].load(std::memory_order_acquire) >> (b % 64)) & 1;
  }
  void set(Key key, bool on) noexcept {
    const std::uint64_t b = bit_of(key);
    const std::uint64_t mask = 1ULL << (b % 64);
    if (on) {
      words_[b / 64].fetch_or(mask, std::memory_order_acq_rel);
    } else {
      words_[b / 64].fetch_and(~mask, std::memory_order_acq_rel);
    }
  }

  std::uint64_t bits_;
  std::vector<std::atomic<std::uint64_t>> words_;
  std::atomic<CheckpointId> checkpoints_{0};
  bool crashed_ = false;
};

// Keeps a 16-byte prefix and the length, and rebuilds the rest by running the
// public value generator under a guessed secret.
class ValueRegenStore final : public KvStore {
 public:
  explicit ValueRegenStore(const StoreConfig& cfg) : guess_(RunSecret::from_seed(0)), shards_(64) {
    for (auto& sh : shards_) sh.map.reserve(cfg.expected_keys / shards_.size() + 1);
  }

  std::string name() const override { return "gallery:II3-value-regen"; }

  Completion read(ThreadId, Key key, ValueBuffer& out) override {
    Shard& sh = shard(key);
    std::lock_guard lock(sh.mu);
    auto it = sh.map.find(key);
    if (it == sh.map.end()) return {Status::not_found, true, {}};
    regenerate(key, it->second, out);
    return {Status::found, true, out.view()};
  }
  Completion upsert(ThreadId, Key key, ByteView value) override {
    Shard& sh = shard(key);
    std::lock_guard lock(sh.mu);
    sh.map[key] = summarize(value);
    return {Status::ok, true, {}};
  }
  Completion rmw(ThreadId, Key key, Modifier modifier) override {
    Shard& sh = shard(key);
    std::lock_guard lock(sh.mu);
    thread_local ValueBuffer cur;
    thread_local ValueBuffer next;
    auto it = sh.map.find(key);
    if (it == sh.map.end()) {
      modifier(std::nullopt, next);
    } else {
      regenerate(key, it->second, cur);
      modifier(cur.view(), next);
    }
    sh.map[key] = summarize(next.view());
    return {Status::ok, true, {}};
  }
  Completion remove(ThreadId, Key key) override {
    Shard& sh = shard(key);
    std::lock_guard lock(sh.mu);
    return {sh.map.erase(key) > 0 ? Status::ok : Status::not_found, true, {}};
  }
  CheckpointId checkpoint() override { return ++checkpoints_; }
  void simulate_crash(CrashMode) override { crashed_ = true; }
  void recover() override {
    if (!crashed_) throw RecoveryError("recover() without a preceding simulate_crash()");
    crashed_ = false;
  }
  IndicatorCounters snapshot_indicators() const override {
    IndicatorCounters c;
    for (const auto& sh : shards_) {
      std::lock_guard lock(sh.mu);
      c.budget_bytes_in_use += sh.map.size() * (sizeof(Key) + sizeof(Summary) + 16);
    }
    return c;
  }

 private:
  struct Summary {
    std::array<std::byte, 16> prefix{};
    std::uint16_t len = 0;
  };
  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<Key, Summary> map;
  };

  static Summary summarize(ByteView v) noexcept {
    Summary s;
    s.len = static_cast<std::uint16_t>(v.size());
    std::memcpy(s.prefix.data(), v.data(), std::min<std::size_t>(16, v.size()));
    return s;
  }

  void regenerate(Key key, const Summary& s, ValueBuffer& out) const {
    auto v = out.prepare(s.len);
    if (s.len > 16) {
      // the prefix holds the key, the thread id and the low six bytes of seq
      const auto tid = load_le<ThreadId>(s.prefix.data() + 8);
      std::uint64_t seq = 0;
      std::memcpy(&seq, s.prefix.data() + 10, 6);
      guess_.write_envelope(v, key, tid, seq);
    }
    std::memcpy(v.data(), s.prefix.data(), std::min<std::size_t>(16, s.len));
  }

  Shard& shard(Key key) noexcept { return shards_[mix64(key) & (shards_.size() - 1)]; }

  ValueFabric guess_;
  std::vector<Shard> shards_;
  std::atomic<CheckpointId> checkpoints_{0};
  bool crashed_ = false;
};

inline std::unique_ptr<KvStore> build_gallery_store(std::string_view id, const StoreConfig& cfg) {
  if (id == "I1-truncated-hash") return std::make_unique<BasicReferenceStore<TruncatedHashPolicy>>(cfg);
  if (id == "I2-cross-thread-ring") return std::make_unique<BasicReferenceStore<CrossThreadRingPolicy>>(cfg);
  if (id == "I3-same-size-inplace") return std::make_unique<BasicReferenceStore<SameSizeInplacePolicy>>(cfg);
  if (id == "II1-flat-array") return std::make_unique<BasicReferenceStore<FlatArrayPolicy>>(cfg);
  if (id == "II2-bitmap-impostor") return std::make_unique<BitmapImpostorStore>(cfg);
  if (id == "II3-value-regen") return std::make_unique<ValueRegenStore>(cfg);
  throw UnknownVariant("unknown gallery variant '" + std::string(id) + "'");
}

}  // namespace kvbench
