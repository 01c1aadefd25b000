#pragma once

// Sharded hash maps under per-shard mutexes with write-through logging.
// Slow and obviously correct: the oracle for differential tests.
//
// Shard log record: len(4) key(8) op(1) bytes(len) crc32(4); the crc covers
// everything before it. op 1 = Upsert, 2 = Delete.

#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvbench/common/files.hpp"
#include "kvbench/store_api.hpp"

namespace kvbench {

// With WriteBehind set, records are buffered per shard and each shard flushes
// on its own threshold. That loses per-thread write order across a crash and
// exists only as a positive control for the monotonicity tests.
template <bool WriteBehind>
class BasicBaselineStore final : public KvStore {
 public:
  explicit BasicBaselineStore(StoreConfig cfg)
      : cfg_(std::move(cfg)),
        shard_count_(static_cast<std::size_t>(next_pow2(4ULL * std::max<std::uint32_t>(1, cfg_.threads)))),
        shards_(shard_count_),
        counters_(cfg_.threads),
        scratch_(cfg_.threads) {
    fs::create_directories(cfg_.dir);
    for (std::size_t i = 0; i < shard_count_; ++i) {
      shards_[i].log = FileHandle::open_rw(shard_path(i));
      shards_[i].log.truncate(0);
      shards_[i].flush_threshold = std::size_t{2048} << (i % 4);
    }
  }

  std::string name() const override { return WriteBehind ? "seeded:reordered-flush" : "baseline"; }

  Completion read(ThreadId, Key key, ValueBuffer& out) override {
    Shard& sh = shard_for(key);
    std::lock_guard lock(sh.mu);
    auto it = sh.map.find(key);
    if (it == sh.map.end()) return {Status::not_found, true, {}};
    out.assign(it->second);
    return {Status::found, true, out.view()};
  }

  Completion upsert(ThreadId tid, Key key, ByteView value) override {
    check_len(value.size());
    Shard& sh = shard_for(key);
    std::lock_guard lock(sh.mu);
    append(sh, tid, key, kOpUpsert, value);
    sh.map[key].assign(value.begin(), value.end());
    return {Status::ok, true, {}};
  }

  Completion rmw(ThreadId tid, Key key, Modifier modifier) override {
    Shard& sh = shard_for(key);
    std::lock_guard lock(sh.mu);
    ValueBuffer& next = scratch(tid);
    auto it = sh.map.find(key);
    if (it == sh.map.end()) {
      modifier(std::nullopt, next);
    } else {
      modifier(ByteView(it->second), next);
    }
    append(sh, tid, key, kOpUpsert, next.view());
    sh.map[key].assign(next.view().begin(), next.view().end());
    return {Status::ok, true, {}};
  }

  Completion remove(ThreadId tid, Key key) override {
    Shard& sh = shard_for(key);
    std::lock_guard lock(sh.mu);
    auto it = sh.map.find(key);
    if (it == sh.map.end()) return {Status::not_found, true, {}};
    append(sh, tid, key, kOpDelete, {});
    sh.map.erase(it);
    return {Status::ok, true, {}};
  }

  CheckpointId checkpoint() override {
    if constexpr (WriteBehind) {
      for (auto& sh : shards_) {
        std::lock_guard lock(sh.mu);
        flush_pending(sh);
      }
    }
    return ++checkpoints_;
  }

  void simulate_crash(CrashMode) override {
    for (auto& sh : shards_) {
      std::lock_guard lock(sh.mu);
      std::unordered_map<Key, Bytes>().swap(sh.map);
      sh.pending.clear();
      sh.tail = 0;
    }
    crashed_ = true;
  }

  void recover() override {
    if (!crashed_) throw RecoveryError("recover() without a preceding simulate_crash()");
    crashed_ = false;
    for (std::size_t i = 0; i < shard_count_; ++i) replay(shards_[i]);
  }

  IndicatorCounters snapshot_indicators() const override {
    IndicatorCounters c = counters_.snapshot();
    std::uint64_t bytes = counters_.bytes() + shards_.size() * sizeof(Shard);
    for (const auto& sh : shards_) {
      std::lock_guard lock(sh.mu);
      bytes += sh.map.bucket_count() * sizeof(void*);
      for (const auto& [k, v] : sh.map) bytes += 48 + v.capacity();
    }
    c.budget_bytes_in_use = bytes;
    return c;
  }

  std::size_t shard_count() const noexcept { return shard_count_; }

 private:
  static constexpr std::uint8_t kOpUpsert = 1;
  static constexpr std::uint8_t kOpDelete = 2;
  static constexpr std::size_t kRecordOverhead = 4 + 8 + 1 + 4;

  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<Key, Bytes> map;
    FileHandle log;
    std::uint64_t tail = 0;
    Bytes record;
    Bytes pending;
    std::size_t flush_threshold = 0;
  };

  void flush_pending(Shard& sh) {
    if (sh.pending.empty()) return;
    sh.log.pwrite_all(sh.pending, sh.tail);
    sh.tail += sh.pending.size();
    sh.pending.clear();
  }

  static void check_len(std::size_t n) {
    if (n > kValueCapacity) throw CapacityError("value of " + std::to_string(n) + " bytes exceeds 65535");
  }

  fs::path shard_path(std::size_t i) const { return cfg_.dir / ("shard." + std::to_string(i)); }

  Shard& shard_for(Key key) noexcept { return shards_[mix64(key ^ cfg_.seed) & (shard_count_ - 1)]; }

  ValueBuffer& scratch(ThreadId tid) { return scratch_.at(tid); }

  void append(Shard& sh, ThreadId tid, Key key, std::uint8_t op, ByteView value) {
    const std::size_t n = kRecordOverhead + value.size();
    sh.record.resize(n);
    std::byte* p = sh.record.data();
    store_le<std::uint32_t>(p, static_cast<std::uint32_t>(value.size()));
    store_le<Key>(p + 4, key);
    p[12] = std::byte{op};
    if (!value.empty()) std::memcpy(p + 13, value.data(), value.size());
    store_le<std::uint32_t>(p + 13 + value.size(), crc32_of(ByteView(p, 13 + value.size())));
    if constexpr (WriteBehind) {
      sh.pending.insert(sh.pending.end(), sh.record.begin(), sh.record.end());
      if (sh.pending.size() >= sh.flush_threshold) flush_pending(sh);
    } else {
      sh.log.pwrite_all(sh.record, sh.tail);
      sh.tail += n;
    }
    counters_.add(tid, CounterBank::bytes_appended, value.size());
  }

  void replay(Shard& sh) {
    std::lock_guard lock(sh.mu);
    const std::uint64_t size = sh.log.size();
    std::uint64_t off = 0;
    Bytes buf;
    for (;;) {
      std::byte head[13];
      if (off + sizeof head > size || sh.log.pread_some(MutableByteView(head, sizeof head), off) != sizeof head) break;
      const auto len = load_le<std::uint32_t>(head);
      const auto key = load_le<Key>(head + 4);
      const auto op = static_cast<std::uint8_t>(head[12]);
      if (len > kValueCapacity || (op != kOpUpsert && op != kOpDelete)) break;
      const std::uint64_t n = kRecordOverhead + len;
      if (off + n > size) break;
      buf.resize(n);
      if (sh.log.pread_some(buf, off) != n) break;
      if (crc32_of(ByteView(buf).first(13 + len)) != load_le<std::uint32_t>(buf.data() + 13 + len)) break;
      if (op == kOpUpsert) {
        sh.map[key].assign(buf.begin() + 13, buf.begin() + 13 + len);
      } else {
        sh.map.erase(key);
      }
      off += n;
    }
    if (off < size) sh.log.truncate(off);
    sh.tail = off;
  }

  StoreConfig cfg_;
  std::size_t shard_count_;
  std::vector<Shard> shards_;
  CounterBank counters_;
  std::vector<ValueBuffer> scratch_;
  std::atomic<CheckpointId> checkpoints_{0};
  bool crashed_ = false;
};

using BaselineStore = BasicBaselineStore<false>;
using ReorderedFlushStore = BasicBaselineStore<true>;

}  // namespace kvbench
