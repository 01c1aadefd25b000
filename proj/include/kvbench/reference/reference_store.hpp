#pragma once

// Open-addressing index of (key, meta word) pairs over per-thread append logs
// whose in-memory ring is the log's unflushed-and-recent prefix.
//
// Writers lock a slot by swapping its meta word to BUSY, append to their own
// log, then publish the new meta word. Readers take no locks: they copy from
// the ring and re-check both the meta word and the owner's cursor afterwards,
// falling back to the file when the ring bytes may have been reused.
//
// The store is a template over a policy so that the gallery variants differ
// from the honest store only in the policy switches they flip.

#include <dirent.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <string>
#include <thread>
#include <vector>

#include "kvbench/common/files.hpp"
#include "kvbench/reference/log_format.hpp"
#include "kvbench/reference/meta_word.hpp"
#include "kvbench/store_api.hpp"

namespace kvbench {

enum class KeyMode : std::uint8_t {
  full,       // slot holds the key; probe start from a 64-bit mix
  hash32,     // slot holds a 32-bit hash of the key and commits on it
  flat,       // slot = key & mask, key never compared
};

struct ReferencePolicy {
  static constexpr const char* kName = "reference";
  static constexpr KeyMode key_mode = KeyMode::full;
  static constexpr bool cross_thread_ring = false;  // non-owner copies into another thread's ring
  static constexpr bool same_size_inplace = false;  // equal-size rewrite in place, meta untouched
};

struct RingCursors {
  std::uint64_t t = 0;      // bytes reserved
  std::uint64_t s = 0;      // bytes fully written
  std::uint64_t f = 0;      // bytes durable in the file
  std::uint64_t floor = 0;  // ring holds nothing below this offset
};

inline constexpr std::uint64_t kMinRingBytes = 1ULL << 20;
inline constexpr std::uint64_t kMinRingOverride = 128ULL << 10;
inline constexpr std::uint64_t kDefaultRingBytes = 8ULL << 20;
inline constexpr std::uint64_t kBudgetReserve = 16ULL << 20;  // process and harness overhead

namespace detail {

inline void cpu_relax() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_ia32_pause();
#endif
}

// Spin briefly, then give the CPU away so a preempted lock holder can finish.
inline void backoff(unsigned& spins) noexcept {
  if (++spins < 32) {
    cpu_relax();
  } else {
    std::this_thread::yield();
  }
}

template <typename T>
struct AlignedArrayDeleter {
  std::size_t n = 0;
  std::size_t align = 64;
  void operator()(T* p) const noexcept {
    std::destroy_n(p, n);
    ::operator delete(static_cast<void*>(p), std::align_val_t(align));
  }
};

template <typename T>
using AlignedArray = std::unique_ptr<T[], AlignedArrayDeleter<T>>;

template <typename T>
AlignedArray<T> make_aligned_array(std::size_t n, std::size_t align) {
  void* raw = ::operator new(n * sizeof(T), std::align_val_t(align));
  T* p = static_cast<T*>(raw);
  std::uninitialized_value_construct_n(p, n);
  return AlignedArray<T>(p, AlignedArrayDeleter<T>{n, align});
}

inline std::vector<std::uint64_t> list_checkpoints(const fs::path& dir) {
  std::vector<std::uint64_t> ids;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ckpt.", 0) != 0) continue;
    const std::string num = name.substr(5);
    if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) continue;
    ids.push_back(std::stoull(num));
  }
  std::sort(ids.rbegin(), ids.rend());
  return ids;
}

}  // namespace detail

template <typename Policy>
class BasicReferenceStore : public KvStore {
 public:
  explicit BasicReferenceStore(StoreConfig cfg) : cfg_(std::move(cfg)), counters_(cfg_.threads) {
    if (cfg_.threads == 0 || cfg_.threads > kMaxThreads)
      throw ConfigError("thread count must be in [1, 64], got " + std::to_string(cfg_.threads));
    capacity_ = next_pow2(std::max<std::uint64_t>(64, 2 * std::max<std::uint64_t>(1, cfg_.expected_keys)));
    mask_ = capacity_ - 1;
    table_bytes_ = (capacity_ + 1) * sizeof(Slot);
    fixed_bytes_ = sizeof(*this) + counters_.bytes() + cfg_.threads * (sizeof(ThreadLog) + sizeof(ActiveFlag)) +
                   2 * cfg_.threads * kValueCapacity;
    ring_bytes_ = size_rings();

    fs::create_directories(cfg_.dir);
    slots_ = detail::make_aligned_array<Slot>(capacity_ + 1, 64);
    logs_ = detail::make_aligned_array<ThreadLog>(cfg_.threads, 64);
    active_ = detail::make_aligned_array<ActiveFlag>(cfg_.threads, 64);
    for (std::uint32_t t = 0; t < cfg_.threads; ++t) {
      ThreadLog& lg = logs_[t];
      lg.ring.reset(static_cast<std::byte*>(::operator new(ring_bytes_, std::align_val_t(4096))));
      lg.file = FileHandle::open_rw(log_path(t));
      lg.file.truncate(0);
    }
    for (std::uint64_t id : detail::list_checkpoints(cfg_.dir)) fs::remove(ckpt_path(id));
    scratch_.reserve(2 * cfg_.threads);
    for (std::uint32_t i = 0; i < 2 * cfg_.threads; ++i) scratch_.emplace_back();
  }

  std::string name() const override { return Policy::kName; }

  // ---- reads ---------------------------------------------------------------

  Completion read(ThreadId tid, Key key, ValueBuffer& out) override {
    Slot* slot = find(tid, key);
    if (slot == nullptr) return {Status::not_found, true, {}};
    unsigned spins = 0;
    for (;;) {
      const std::uint64_t m1 = slot->meta.load(std::memory_order_acquire);
      switch (meta::tag(m1)) {
        case meta::Tag::empty:
        case meta::Tag::tombstone:
          return {Status::not_found, true, {}};
        case meta::Tag::inline_value: {
          auto dst = out.prepare(meta::inline_len(m1));
          meta::inline_copy(m1, dst.data());
          count(tid, CounterBank::inline_hits);
          return {Status::found, true, out.view()};
        }
        case meta::Tag::log_ptr:
          break;
      }
      if (meta::is_busy(m1)) {
        count(tid, CounterBank::seqlock_retries);
        detail::backoff(spins);
        continue;
      }
      switch (copy_from_ring(m1, out, &slot->meta)) {
        case RingCopy::ok:
          count(tid, CounterBank::ring_hits);
          if (cfg_.self_check) check_against_file(m1, out.view());
          return {Status::found, true, out.view()};
        case RingCopy::meta_changed:
          count(tid, CounterBank::seqlock_retries);
          continue;
        case RingCopy::not_in_ring:
          break;
      }
      read_from_file(m1, out);
      count(tid, CounterBank::file_reads);
      return {Status::found, false, out.view()};
    }
  }

  // ---- writes --------------------------------------------------------------

  Completion upsert(ThreadId tid, Key key, ByteView value) override {
    if (value.size() > kValueCapacity)
      throw CapacityError("value of " + std::to_string(value.size()) + " bytes exceeds 65535");
    WriterGuard guard(*this, tid);
    Slot* slot = find_or_claim(tid, key);
    if constexpr (Policy::cross_thread_ring || Policy::same_size_inplace) {
      if (unlocked_overwrite(tid, slot, value)) return {Status::ok, true, {}};
    }
    const std::uint64_t old = lock_slot(slot);
    write_locked(tid, key, slot, old, value);
    return {Status::ok, true, {}};
  }

  Completion rmw(ThreadId tid, Key key, Modifier modifier) override {
    WriterGuard guard(*this, tid);
    Slot* slot = find_or_claim(tid, key);
    const std::uint64_t old = lock_slot(slot);
    ValueBuffer& cur = scratch_[2 * tid];
    ValueBuffer& next = scratch_[2 * tid + 1];
    try {
      switch (meta::tag(old)) {
        case meta::Tag::inline_value:
          meta::inline_copy(old, cur.prepare(meta::inline_len(old)).data());
          modifier(cur.view(), next);
          break;
        case meta::Tag::log_ptr:
          if (copy_from_ring(old, cur, nullptr) != RingCopy::ok) read_from_file(old, cur);
          modifier(cur.view(), next);
          break;
        default:
          modifier(std::nullopt, next);
      }
      write_locked(tid, key, slot, old, next.view());
    } catch (...) {
      slot->meta.store(old, std::memory_order_release);
      throw;
    }
    return {Status::ok, true, {}};
  }

  Completion remove(ThreadId tid, Key key) override {
    WriterGuard guard(*this, tid);
    Slot* slot = find(tid, key);
    if (slot == nullptr) return {Status::not_found, true, {}};
    const std::uint64_t old = lock_slot(slot);
    if (meta::tag(old) == meta::Tag::empty || meta::tag(old) == meta::Tag::tombstone) {
      slot->meta.store(old, std::memory_order_release);
      return {Status::not_found, true, {}};
    }
    try {
      append(tid, key, logfmt::Kind::tombstone, {}, 0);
    } catch (...) {
      slot->meta.store(old, std::memory_order_release);
      throw;
    }
    slot->meta.store(meta::kTombstone, std::memory_order_release);
    maybe_flush(tid);
    return {Status::ok, true, {}};
  }

  // ---- durability ----------------------------------------------------------

  CheckpointId checkpoint() override {
    std::lock_guard lock(ckpt_mu_);
    Bytes image;
    {
      Quiesce q(*this);
      for (std::uint32_t t = 0; t < cfg_.threads; ++t) flush_all(logs_[t]);
      image = serialize_checkpoint();
    }
    const CheckpointId id = ++last_checkpoint_;
    const fs::path tmp = cfg_.dir / ("ckpt." + std::to_string(id) + ".tmp");
    {
      FileHandle f(tmp, O_RDWR | O_CREAT | O_TRUNC);
      f.pwrite_all(image, 0);
      f.datasync();
    }
    fs::rename(tmp, ckpt_path(id));
    return id;
  }

  void simulate_crash(CrashMode mode) override {
    crash_mode_ = mode;
    crashed_ = true;
    std::uninitialized_value_construct_n(reset_slots(), capacity_ + 1);
    occupied_.store(0, std::memory_order_relaxed);
    for (std::uint32_t t = 0; t < cfg_.threads; ++t) {
      ThreadLog& lg = logs_[t];
      lg.t.store(0, std::memory_order_relaxed);
      lg.s.store(0, std::memory_order_relaxed);
      lg.f.store(0, std::memory_order_relaxed);
      lg.floor.store(0, std::memory_order_relaxed);
    }
  }

  void recover() override {
    if (!crashed_) throw RecoveryError("recover() without a preceding simulate_crash()");
    crashed_ = false;
    std::vector<std::uint64_t> marks(cfg_.threads, 0);
    std::uint64_t clock = 0;
    if (crash_mode_ == CrashMode::fuzzy_checkpoint) {
      for (std::uint64_t id : detail::list_checkpoints(cfg_.dir)) {
        if (load_checkpoint(id, marks, clock)) {
          last_checkpoint_ = std::max<CheckpointId>(last_checkpoint_, id);
          break;
        }
        std::uninitialized_value_construct_n(reset_slots(), capacity_ + 1);
        occupied_.store(0, std::memory_order_relaxed);
        std::fill(marks.begin(), marks.end(), 0);
        clock = 0;
      }
    }
    std::vector<std::uint64_t> stamps(capacity_ + 1, 0);
    for (std::uint32_t t = 0; t < cfg_.threads; ++t) clock = std::max(clock, replay_log(t, marks[t], stamps));
    clock_.store(clock, std::memory_order_relaxed);
  }

  IndicatorCounters snapshot_indicators() const override {
    IndicatorCounters c = counters_.snapshot();
    c.budget_bytes_in_use = footprint_bytes();
    return c;
  }

  // Writes this thread's unflushed bytes to its file when at least `chunk`
  // bytes are pending, then drops them from the page cache. Owner only.
  bool flush_and_drop(ThreadId tid, std::uint64_t chunk) {
    ThreadLog& lg = logs_[tid];
    if (lg.s.load(std::memory_order_relaxed) - lg.f.load(std::memory_order_relaxed) < chunk) return false;
    flush_all(lg);
    return true;
  }

  // ---- introspection -------------------------------------------------------

  std::uint64_t capacity() const noexcept { return capacity_; }
  std::uint64_t ring_bytes() const noexcept { return ring_bytes_; }
  std::uint64_t table_bytes() const noexcept { return table_bytes_; }
  std::uint64_t footprint_bytes() const noexcept {
    return table_bytes_ + ring_bytes_ * cfg_.threads + fixed_bytes_;
  }
  std::uint64_t occupancy() const noexcept { return occupied_.load(std::memory_order_relaxed); }
  const StoreConfig& config() const noexcept { return cfg_; }

  RingCursors cursors(ThreadId tid) const noexcept {
    const ThreadLog& lg = logs_[tid];
    return {lg.t.load(std::memory_order_acquire), lg.s.load(std::memory_order_acquire),
            lg.f.load(std::memory_order_acquire), lg.floor.load(std::memory_order_acquire)};
  }

  // Current meta word for key, or nullopt if the key never claimed a slot.
  std::optional<std::uint64_t> meta_of(Key key) {
    Slot* slot = find(static_cast<ThreadId>(cfg_.threads), key);
    if (slot == nullptr) return std::nullopt;
    return slot->meta.load(std::memory_order_acquire);
  }

 private:
  struct alignas(16) Slot {
    std::atomic<std::uint64_t> key{0};
    std::atomic<std::uint64_t> meta{0};
  };
  static_assert(sizeof(Slot) == 16);

  struct RingDeleter {
    void operator()(std::byte* p) const noexcept { ::operator delete(p, std::align_val_t(4096)); }
  };

  struct alignas(64) ThreadLog {
    std::atomic<std::uint64_t> t{0};
    alignas(64) std::atomic<std::uint64_t> s{0};
    std::atomic<std::uint64_t> f{0};
    std::atomic<std::uint64_t> floor{0};
    std::unique_ptr<std::byte, RingDeleter> ring;
    FileHandle file;
  };

  struct alignas(64) ActiveFlag {
    std::atomic<bool> v{false};
  };

  enum class RingCopy { ok, meta_changed, not_in_ring };

  // Registers a writer so checkpoints can wait for in-flight writes.
  class WriterGuard {
   public:
    WriterGuard(BasicReferenceStore& st, ThreadId tid) : flag_(st.active_[tid].v) {
      for (;;) {
        flag_.store(true, std::memory_order_seq_cst);
        if (!st.paused_.load(std::memory_order_seq_cst)) return;
        flag_.store(false, std::memory_order_seq_cst);
        unsigned spins = 0;
        while (st.paused_.load(std::memory_order_acquire)) detail::backoff(spins);
      }
    }
    ~WriterGuard() { flag_.store(false, std::memory_order_release); }
    WriterGuard(const WriterGuard&) = delete;
    WriterGuard& operator=(const WriterGuard&) = delete;

   private:
    std::atomic<bool>& flag_;
  };

  class Quiesce {
   public:
    explicit Quiesce(BasicReferenceStore& st) : st_(st) {
      st_.paused_.store(true, std::memory_order_seq_cst);
      for (std::uint32_t t = 0; t < st_.cfg_.threads; ++t) {
        unsigned spins = 0;
        while (st_.active_[t].v.load(std::memory_order_seq_cst)) detail::backoff(spins);
      }
    }
    ~Quiesce() { st_.paused_.store(false, std::memory_order_seq_cst); }
    Quiesce(const Quiesce&) = delete;
    Quiesce& operator=(const Quiesce&) = delete;

   private:
    BasicReferenceStore& st_;
  };

  std::uint64_t size_rings() const {
    std::uint64_t r;
    if (cfg_.ring_bytes != 0) {
      r = std::max(kMinRingOverride, (cfg_.ring_bytes + 4095) / 4096 * 4096);
    } else if (cfg_.effective_budget == 0) {
      r = kDefaultRingBytes;
    } else {
      const std::uint64_t used = table_bytes_ + fixed_bytes_ + kBudgetReserve;
      const std::uint64_t avail = cfg_.effective_budget > used ? cfg_.effective_budget - used : 0;
      r = std::max(kMinRingBytes, avail / cfg_.threads / 4096 * 4096);
    }
    if (cfg_.effective_budget != 0) {
      const std::uint64_t need = table_bytes_ + r * cfg_.threads + fixed_bytes_ + kBudgetReserve;
      if (need > cfg_.effective_budget)
        throw CapacityError("store needs " + std::to_string(need) + " B (table " + std::to_string(table_bytes_) +
                            " B, rings " + std::to_string(r * cfg_.threads) + " B) but the effective budget is " +
                            std::to_string(cfg_.effective_budget) + " B",
                          need);
    }
    return r;
  }

  fs::path log_path(std::uint32_t t) const { return cfg_.dir / ("log." + std::to_string(t)); }
  fs::path ckpt_path(std::uint64_t id) const { return cfg_.dir / ("ckpt." + std::to_string(id)); }

  Slot* reset_slots() noexcept {
    std::destroy_n(slots_.get(), capacity_ + 1);
    return slots_.get();
  }

  void count(ThreadId tid, CounterBank::Field f, std::uint64_t n = 1) noexcept {
    if (tid < cfg_.threads) {
      counters_.add(tid, f, n);
    } else {
      counters_.add_shared(f, n);
    }
  }

  // ---- index ---------------------------------------------------------------

  std::uint64_t stored_key(Key key) const noexcept {
    if constexpr (Policy::key_mode == KeyMode::hash32) {
      return (mix64(key ^ cfg_.seed) >> 32) | (1ULL << 32);
    } else {
      return key;
    }
  }

  std::uint64_t start_of(std::uint64_t stored) const noexcept {
    if constexpr (Policy::key_mode == KeyMode::hash32) {
      return stored & 0xffffffffULL & mask_;
    } else if constexpr (Policy::key_mode == KeyMode::flat) {
      return stored & mask_;
    } else {
      return mix64(stored ^ cfg_.seed) & mask_;
    }
  }

  Slot* find(ThreadId tid, Key key) noexcept {
    if constexpr (Policy::key_mode == KeyMode::flat) {
      count(tid, CounterBank::probe_steps);
      Slot& s = slots_[key & mask_];
      return s.meta.load(std::memory_order_acquire) != 0 || s.key.load(std::memory_order_acquire) != 0 ? &s
                                                                                                         : nullptr;
    } else {
      const std::uint64_t stored = stored_key(key);
      if (stored == 0) return &slots_[capacity_];
      std::uint64_t i = start_of(stored);
      std::uint64_t steps = 1;
      for (;; ++steps, i = (i + 1) & mask_) {
        const std::uint64_t k = slots_[i].key.load(std::memory_order_acquire);
        if (k == stored || k == 0) {
          count(tid, CounterBank::probe_steps, steps);
          return k == stored ? &slots_[i] : nullptr;
        }
      }
    }
  }

  Slot* find_or_claim(ThreadId tid, Key key) {
    const std::uint64_t stored = stored_key(key);
    if constexpr (Policy::key_mode == KeyMode::flat) {
      count(tid, CounterBank::probe_steps);
      Slot& s = slots_[key & mask_];
      std::uint64_t expected = 0;
      if (s.key.load(std::memory_order_acquire) == 0 && stored != 0) {
        reserve_occupancy();
        if (!s.key.compare_exchange_strong(expected, stored, std::memory_order_acq_rel))
          occupied_.fetch_sub(1, std::memory_order_relaxed);
      }
      return &s;
    } else {
      if (stored == 0) return &slots_[capacity_];
      std::uint64_t i = start_of(stored);
      std::uint64_t steps = 1;
      for (;; ++steps, i = (i + 1) & mask_) {
        std::uint64_t k = slots_[i].key.load(std::memory_order_acquire);
        if (k == 0) {
          reserve_occupancy();
          if (slots_[i].key.compare_exchange_strong(k, stored, std::memory_order_acq_rel)) {
            count(tid, CounterBank::probe_steps, steps);
            return &slots_[i];
          }
          occupied_.fetch_sub(1, std::memory_order_relaxed);
        }
        if (k == stored) {
          count(tid, CounterBank::probe_steps, steps);
          return &slots_[i];
        }
      }
    }
  }

  void reserve_occupancy() {
    if (occupied_.fetch_add(1, std::memory_order_relaxed) >= capacity_ / 2) {
      occupied_.fetch_sub(1, std::memory_order_relaxed);
      throw CapacityError("index occupancy would exceed half of " + std::to_string(capacity_) + " slots");
    }
  }

  std::uint64_t lock_slot(Slot* slot) noexcept {
    unsigned spins = 0;
    for (;;) {
      std::uint64_t m = slot->meta.load(std::memory_order_relaxed);
      if (!meta::is_busy(m) &&
          slot->meta.compare_exchange_weak(m, meta::kBusy, std::memory_order_acquire, std::memory_order_relaxed)) {
        // Orders the BUSY marker before any in-place byte writes that follow.
        std::atomic_thread_fence(std::memory_order_release);
        return m;
      }
      detail::backoff(spins);
    }
  }

  // ---- ring and file -------------------------------------------------------

  void ring_write(ThreadLog& lg, std::uint64_t off, const std::byte* src, std::size_t n) noexcept {
    const std::uint64_t pos = off % ring_bytes_;
    const std::size_t first = static_cast<std::size_t>(std::min<std::uint64_t>(n, ring_bytes_ - pos));
    std::memcpy(lg.ring.get() + pos, src, first);
    if (first < n) std::memcpy(lg.ring.get(), src + first, n - first);
  }

  void ring_read(const ThreadLog& lg, std::uint64_t off, std::byte* dst, std::size_t n) const noexcept {
    const std::uint64_t pos = off % ring_bytes_;
    const std::size_t first = static_cast<std::size_t>(std::min<std::uint64_t>(n, ring_bytes_ - pos));
    std::memcpy(dst, lg.ring.get() + pos, first);
    if (first < n) std::memcpy(dst + first, lg.ring.get(), n - first);
  }

  // Copies the value named by m out of its owner's ring. With `watch` set the
  // copy is only accepted if *watch still equals m afterwards.
  RingCopy copy_from_ring(std::uint64_t m, ValueBuffer& out, const std::atomic<std::uint64_t>* watch) noexcept {
    const ThreadLog& lg = logs_[meta::log_tid(m)];
    const std::uint64_t off = meta::log_off(m);
    const std::size_t size = meta::log_size(m);
    const std::uint64_t t1 = lg.t.load(std::memory_order_acquire);
    const std::uint64_t floor = lg.floor.load(std::memory_order_acquire);
    if (off < floor + logfmt::kHeaderBytes || t1 > off + ring_bytes_) return RingCopy::not_in_ring;
    ring_read(lg, off, out.prepare(size).data(), size);
    std::atomic_thread_fence(std::memory_order_acquire);
    const std::uint64_t t2 = lg.t.load(std::memory_order_acquire);
    if (watch != nullptr && watch->load(std::memory_order_relaxed) != m) return RingCopy::meta_changed;
    return t2 <= off + ring_bytes_ ? RingCopy::ok : RingCopy::not_in_ring;
  }

  void read_from_file(std::uint64_t m, ValueBuffer& out) const {
    const ThreadLog& lg = logs_[meta::log_tid(m)];
    const std::uint64_t off = meta::log_off(m);
    const std::size_t size = meta::log_size(m);
    if (off + size > lg.f.load(std::memory_order_acquire))
      throw StoreFault("record at " + std::to_string(off) + " left the ring before it was flushed");
    if (lg.file.pread_some(out.prepare(size), off) != size)
      throw StoreFault("short read of " + std::to_string(size) + " bytes at offset " + std::to_string(off));
  }

  void check_against_file(std::uint64_t m, ByteView ring_bytes) const {
    const ThreadLog& lg = logs_[meta::log_tid(m)];
    const std::uint64_t off = meta::log_off(m);
    if (off + ring_bytes.size() > lg.f.load(std::memory_order_acquire)) return;
    thread_local ValueBuffer file_copy;
    if (lg.file.pread_some(file_copy.prepare(ring_bytes.size()), off) != ring_bytes.size() ||
        !equal_bytes(file_copy.view(), ring_bytes))
      throw StoreFault("ring and file disagree for record at offset " + std::to_string(off));
  }

  // Writes [f, s) to the file and drops it from the page cache.
  void flush_all(ThreadLog& lg) {
    const std::uint64_t f = lg.f.load(std::memory_order_relaxed);
    const std::uint64_t s = lg.s.load(std::memory_order_acquire);
    if (s == f) return;
    const std::uint64_t pos = f % ring_bytes_;
    const std::uint64_t len = s - f;
    const std::uint64_t first = std::min(len, ring_bytes_ - pos);
    try {
      lg.file.pwrite_all(ByteView(lg.ring.get() + pos, first), f);
      if (first < len) lg.file.pwrite_all(ByteView(lg.ring.get(), len - first), f + first);
    } catch (const std::exception& e) {
      throw StoreFault(std::string("log flush failed: ") + e.what());
    }
    lg.file.write_back_and_drop(f, len);
    lg.f.store(s, std::memory_order_release);
  }

  void maybe_flush(ThreadId tid) {
    ThreadLog& lg = logs_[tid];
    if (lg.s.load(std::memory_order_relaxed) - lg.f.load(std::memory_order_relaxed) > ring_bytes_ / 2) flush_all(lg);
  }

  // Appends one record to tid's log. Caller holds the slot lock. Returns the
  // offset of the first value byte.
  std::uint64_t append(ThreadId tid, Key key, logfmt::Kind kind, ByteView payload, std::uint16_t span) {
    ThreadLog& lg = logs_[tid];
    const std::uint64_t total = logfmt::kHeaderBytes + span;
    const std::uint64_t t = lg.t.load(std::memory_order_relaxed);
    if (t + total - lg.f.load(std::memory_order_relaxed) > ring_bytes_) flush_all(lg);
    if (t + total > meta::kMaxOffset)
      throw CapacityError("log offset space of thread " + std::to_string(tid) + " exhausted");

    std::byte header[logfmt::kHeaderBytes];
    logfmt::RecordHeader rh;
    rh.key = key;
    rh.stamp = clock_.fetch_add(1, std::memory_order_relaxed) + 1;
    rh.len = static_cast<std::uint16_t>(payload.size());
    rh.span = span;
    rh.kind = kind;
    logfmt::encode(header, rh);
    logfmt::seal(header, payload);

    lg.t.store(t + total, std::memory_order_release);
    std::atomic_thread_fence(std::memory_order_release);
    ring_write(lg, t, header, sizeof header);
    if (!payload.empty()) ring_write(lg, t + logfmt::kHeaderBytes, payload.data(), payload.size());
    lg.s.store(t + total, std::memory_order_release);
    return t + logfmt::kHeaderBytes;
  }

  bool can_shrink(ThreadId tid, std::uint64_t old, std::size_t n) const noexcept {
    if (meta::tag(old) != meta::Tag::log_ptr || meta::log_tid(old) != tid) return false;
    if (n >= meta::log_size(old)) return false;
    const ThreadLog& lg = logs_[tid];
    const std::uint64_t off = meta::log_off(old);
    return off >= lg.f.load(std::memory_order_relaxed) + logfmt::kHeaderBytes &&
           off >= lg.floor.load(std::memory_order_relaxed) + logfmt::kHeaderBytes;
  }

  // Rewrites an unflushed own record in place with a strictly shorter value.
  // Only the last record of the log qualifies: rewriting an older one would
  // let this write survive a crash that loses the records appended after it.
  // Returns 0 when the record is not the tail.
  std::uint64_t shrink_in_place(ThreadId tid, Key key, std::uint64_t old, ByteView value) {
    ThreadLog& lg = logs_[tid];
    const std::uint64_t off = meta::log_off(old);
    std::byte header[logfmt::kHeaderBytes];
    ring_read(lg, off - logfmt::kHeaderBytes, header, sizeof header);
    logfmt::RecordHeader rh;
    logfmt::decode(header, rh);
    if (off + rh.span != lg.t.load(std::memory_order_relaxed)) return 0;
    rh.key = key;
    rh.stamp = clock_.fetch_add(1, std::memory_order_relaxed) + 1;
    rh.len = static_cast<std::uint16_t>(value.size());
    logfmt::encode(header, rh);
    logfmt::seal(header, value);
    ring_write(lg, off, value.data(), value.size());
    ring_write(lg, off - logfmt::kHeaderBytes, header, sizeof header);
    return meta::make_log_ptr(tid, off, static_cast<std::uint16_t>(value.size()));
  }

  void write_locked(ThreadId tid, Key key, Slot* slot, std::uint64_t old, ByteView value) {
    std::uint64_t next;
    try {
      if (value.size() <= meta::kMaxInline) {
        next = meta::make_inline(value);
        std::byte word[8];
        store_le<std::uint64_t>(word, next);
        append(tid, key, logfmt::Kind::inline_value, ByteView(word, 8), 8);
      } else if (const std::uint64_t shrunk = can_shrink(tid, old, value.size()) ? shrink_in_place(tid, key, old, value) : 0;
                 shrunk != 0) {
        next = shrunk;
      } else {
        const auto n = static_cast<std::uint16_t>(value.size());
        const std::uint64_t off = append(tid, key, logfmt::Kind::value, value, n);
        next = meta::make_log_ptr(tid, off, n);
        counters_.add(tid, CounterBank::bytes_appended, n);
      }
    } catch (...) {
      slot->meta.store(old, std::memory_order_release);
      throw;
    }
    slot->meta.store(next, std::memory_order_release);
    maybe_flush(tid);
  }

  // Gallery defects: overwrite ring bytes without taking the slot lock.
  bool unlocked_overwrite(ThreadId tid, Slot* slot, ByteView value) noexcept {
    const std::uint64_t m = slot->meta.load(std::memory_order_acquire);
    if (meta::tag(m) != meta::Tag::log_ptr || meta::is_busy(m)) return false;
    const std::uint32_t owner = meta::log_tid(m);
    const std::uint64_t off = meta::log_off(m);
    const std::size_t size = meta::log_size(m);
    ThreadLog& lg = logs_[owner];
    if (value.size() <= meta::kMaxInline || off < lg.f.load(std::memory_order_acquire) + logfmt::kHeaderBytes ||
        off < lg.floor.load(std::memory_order_acquire) + logfmt::kHeaderBytes ||
        lg.t.load(std::memory_order_acquire) > off + ring_bytes_ - size)
      return false;
    bool take = false;
    if constexpr (Policy::same_size_inplace) take = take || (owner == tid && value.size() == size);
    if constexpr (Policy::cross_thread_ring) take = take || (owner != tid && value.size() <= size);
    if (!take) return false;
    ring_write(lg, off, value.data(), value.size());
    if (value.size() != size)
      slot->meta.store(meta::make_log_ptr(owner, off, static_cast<std::uint16_t>(value.size())),
                       std::memory_order_release);
    return true;
  }

  // ---- checkpoint and recovery --------------------------------------------

  Bytes serialize_checkpoint() const {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> entries;
    for (std::uint64_t i = 0; i <= capacity_; ++i) {
      const std::uint64_t m = slots_[i].meta.load(std::memory_order_acquire);
      if (m == 0) continue;
      entries.emplace_back(i == capacity_ ? 0 : slots_[i].key.load(std::memory_order_acquire), m);
    }
    Bytes out(8 + 4 + 4 + 8 + 8 + 8 + 8 * cfg_.threads + 16 * entries.size() + 4);
    std::byte* p = out.data();
    std::memcpy(p, logfmt::kCheckpointMagic, 8);
    p += 8;
    store_le<std::uint32_t>(p, logfmt::kCheckpointVersion), p += 4;
    store_le<std::uint32_t>(p, cfg_.threads), p += 4;
    store_le<std::uint64_t>(p, capacity_), p += 8;
    store_le<std::uint64_t>(p, clock_.load(std::memory_order_relaxed)), p += 8;
    store_le<std::uint64_t>(p, entries.size()), p += 8;
    for (std::uint32_t t = 0; t < cfg_.threads; ++t) store_le<std::uint64_t>(p, logs_[t].f.load()), p += 8;
    for (const auto& [k, m] : entries) {
      store_le<std::uint64_t>(p, k), p += 8;
      store_le<std::uint64_t>(p, m), p += 8;
    }
    store_le<std::uint32_t>(p, crc32_of(ByteView(out.data(), out.size() - 4)));
    return out;
  }

  // Loads a checkpoint into the (empty) table. False if the file is damaged
  // or was written by a differently shaped store.
  bool load_checkpoint(std::uint64_t id, std::vector<std::uint64_t>& marks, std::uint64_t& clock) {
    Bytes img;
    try {
      FileHandle f = FileHandle::open_ro(ckpt_path(id));
      img.resize(f.size());
      if (f.pread_some(img, 0) != img.size()) return false;
    } catch (const std::exception&) {
      return false;
    }
    const std::size_t fixed = 8 + 4 + 4 + 8 + 8 + 8;
    if (img.size() < fixed + 4 || std::memcmp(img.data(), logfmt::kCheckpointMagic, 8) != 0) return false;
    if (crc32_of(ByteView(img.data(), img.size() - 4)) != load_le<std::uint32_t>(img.data() + img.size() - 4))
      return false;
    const std::byte* p = img.data() + 8;
    const auto version = load_le<std::uint32_t>(p);
    const auto threads = load_le<std::uint32_t>(p + 4);
    const auto capacity = load_le<std::uint64_t>(p + 8);
    clock = load_le<std::uint64_t>(p + 16);
    const auto n = load_le<std::uint64_t>(p + 24);
    p += 32;
    if (version != logfmt::kCheckpointVersion || threads != cfg_.threads || capacity != capacity_) return false;
    if (img.size() != fixed + 8ULL * threads + 16 * n + 4) return false;
    for (std::uint32_t t = 0; t < threads; ++t) marks[t] = load_le<std::uint64_t>(p), p += 8;
    for (std::uint64_t e = 0; e < n; ++e, p += 16) {
      const auto stored = load_le<std::uint64_t>(p);
      const auto m = load_le<std::uint64_t>(p + 8);
      Slot* slot = place_stored(stored);
      if (slot == nullptr) return false;
      slot->meta.store(m, std::memory_order_relaxed);
    }
    for (std::uint32_t t = 0; t < threads; ++t) {
      if (logs_[t].file.size() < marks[t]) return false;
    }
    return true;
  }

  Slot* place_stored(std::uint64_t stored) {
    if constexpr (Policy::key_mode != KeyMode::flat) {
      if (stored == 0) return &slots_[capacity_];
    }
    std::uint64_t i = start_of(stored);
    for (std::uint64_t n = 0; n <= capacity_; ++n, i = (i + 1) & mask_) {
      std::uint64_t k = slots_[i].key.load(std::memory_order_relaxed);
      if constexpr (Policy::key_mode == KeyMode::flat) {
        if (k == 0) {
          slots_[i].key.store(stored, std::memory_order_relaxed);
          occupied_.fetch_add(1, std::memory_order_relaxed);
        }
        return &slots_[i];
      }
      if (k == stored) return &slots_[i];
      if (k == 0) {
        slots_[i].key.store(stored, std::memory_order_relaxed);
        occupied_.fetch_add(1, std::memory_order_relaxed);
        return &slots_[i];
      }
    }
    return nullptr;
  }

  // Replays records of thread t from `from`, truncating at the first bad one.
  // Returns the highest stamp seen.
  std::uint64_t replay_log(std::uint32_t t, std::uint64_t from, std::vector<std::uint64_t>& stamps) {
    ThreadLog& lg = logs_[t];
    const std::uint64_t size = lg.file.size();
    std::uint64_t off = from;
    std::uint64_t clock = 0;
    Bytes chunk(4 << 20);
    std::uint64_t chunk_off = 0;
    std::uint64_t chunk_len = 0;
    auto fetch = [&](std::uint64_t at, std::size_t n) -> const std::byte* {
      if (at < chunk_off || at + n > chunk_off + chunk_len) {
        chunk_off = at;
        chunk_len = lg.file.pread_some(MutableByteView(chunk.data(), chunk.size()), at);
        if (n > chunk_len) return nullptr;
      }
      return chunk.data() + (at - chunk_off);
    };
    while (off + logfmt::kHeaderBytes <= size) {
      const std::byte* h = fetch(off, logfmt::kHeaderBytes);
      logfmt::RecordHeader rh;
      if (h == nullptr || !logfmt::decode(h, rh)) break;
      const std::uint64_t total = logfmt::kHeaderBytes + rh.span;
      if (off + total > size) break;
      std::byte header[logfmt::kHeaderBytes];
      std::memcpy(header, h, sizeof header);
      const std::byte* v = fetch(off + logfmt::kHeaderBytes, rh.len);
      if (v == nullptr && rh.len > 0) break;
      if (logfmt::record_crc(header, ByteView(v, rh.len)) != load_le<std::uint32_t>(header + 4)) break;

      std::uint64_t m = 0;
      switch (rh.kind) {
        case logfmt::Kind::value: m = meta::make_log_ptr(t, off + logfmt::kHeaderBytes, rh.len); break;
        case logfmt::Kind::inline_value: m = load_le<std::uint64_t>(v); break;
        case logfmt::Kind::tombstone: m = meta::kTombstone; break;
      }
      Slot* slot = find_or_claim(static_cast<ThreadId>(cfg_.threads), rh.key);
      const std::size_t idx = static_cast<std::size_t>(slot - slots_.get());
      if (rh.stamp > stamps[idx]) {
        stamps[idx] = rh.stamp;
        slot->meta.store(m, std::memory_order_relaxed);
      }
      clock = std::max(clock, rh.stamp);
      off += total;
    }
    if (off < size) lg.file.truncate(off);
    lg.t.store(off, std::memory_order_relaxed);
    lg.s.store(off, std::memory_order_relaxed);
    lg.f.store(off, std::memory_order_relaxed);
    lg.floor.store(off, std::memory_order_release);
    return clock;
  }

  StoreConfig cfg_;
  CounterBank counters_;
  std::uint64_t capacity_ = 0;
  std::uint64_t mask_ = 0;
  std::uint64_t table_bytes_ = 0;
  std::uint64_t fixed_bytes_ = 0;
  std::uint64_t ring_bytes_ = 0;

  detail::AlignedArray<Slot> slots_;
  detail::AlignedArray<ThreadLog> logs_;
  detail::AlignedArray<ActiveFlag> active_;
  std::vector<ValueBuffer> scratch_;

  alignas(64) std::atomic<std::uint64_t> occupied_{0};
  alignas(64) std::atomic<std::uint64_t> clock_{0};
  alignas(64) std::atomic<bool> paused_{false};

  std::mutex ckpt_mu_;
  CheckpointId last_checkpoint_ = 0;
  CrashMode crash_mode_ = CrashMode::no_checkpoint;
  bool crashed_ = false;
};

using ReferenceStore = BasicReferenceStore<ReferencePolicy>;

}  // namespace kvbench
