#pragma once

// What every store under test implements. Callers pass a stable ThreadId
// (0 <= tid < StoreConfig::threads) with each operation; a tid must not be
// used by two OS threads at once.

#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "kvbench/common/bytes.hpp"
#include "kvbench/common/errors.hpp"
#include "kvbench/value_fabric.hpp"

namespace kvbench {

inline constexpr std::size_t kValueCapacity = 65535;
inline constexpr std::uint32_t kMaxThreads = 64;

// Caller-owned destination for read results and rmw successors. Allocated once.
class ValueBuffer {
 public:
  ValueBuffer() : data_(new std::byte[kValueCapacity]) {}

  MutableByteView prepare(std::size_t n) {
    if (n > kValueCapacity) throw CapacityError("value of " + std::to_string(n) + " bytes exceeds 65535");
    size_ = n;
    return {data_.get(), n};
  }
  void assign(ByteView bytes) {
    auto out = prepare(bytes.size());
    if (!bytes.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  }
  ByteView view() const noexcept { return {data_.get(), size_}; }
  std::byte* data() noexcept { return data_.get(); }
  std::size_t size() const noexcept { return size_; }

 private:
  std::unique_ptr<std::byte[]> data_;
  std::size_t size_ = 0;
};

enum class Status : std::uint8_t { found, not_found, ok };

struct Completion {
  Status status = Status::ok;
  bool synchronous = true;
  ByteView value{};  // found only; points into the caller's ValueBuffer
};

// Non-owning reference to the rmw callback: f(current or nullopt, successor).
class Modifier {
 public:
  // The callable must outlive the rmw call it is passed to.
  template <typename F>
    requires(!std::is_same_v<std::remove_cvref_t<F>, Modifier>)
  Modifier(F&& f) noexcept  // NOLINT(google-explicit-constructor)
      : obj_(const_cast<void*>(static_cast<const void*>(std::addressof(f)))),
        call_([](void* o, std::optional<ByteView> cur, ValueBuffer& next) {
          (*static_cast<std::remove_reference_t<F>*>(o))(cur, next);
        }) {}

  void operator()(std::optional<ByteView> current, ValueBuffer& next) const { call_(obj_, current, next); }

 private:
  void* obj_;
  void (*call_)(void*, std::optional<ByteView>, ValueBuffer&);
};

enum class CrashMode : std::uint8_t { fuzzy_checkpoint, no_checkpoint };

using CheckpointId = std::uint64_t;

struct IndicatorCounters {
  std::uint64_t ring_hits = 0;
  std::uint64_t inline_hits = 0;
  std::uint64_t file_reads = 0;
  std::uint64_t seqlock_retries = 0;
  std::uint64_t probe_steps = 0;
  std::uint64_t bytes_appended = 0;
  std::uint64_t budget_bytes_in_use = 0;  // gauge

  // Monotone counters become differences; the gauge keeps the later value.
  IndicatorCounters delta_since(const IndicatorCounters& before) const noexcept {
    return {ring_hits - before.ring_hits,       inline_hits - before.inline_hits,
            file_reads - before.file_reads,     seqlock_retries - before.seqlock_retries,
            probe_steps - before.probe_steps,   bytes_appended - before.bytes_appended,
            budget_bytes_in_use};
  }
  bool operator==(const IndicatorCounters&) const = default;
};

inline nlohmann::json to_json(const IndicatorCounters& c) {
  return {{"ring_hits", c.ring_hits},         {"inline_hits", c.inline_hits},
          {"file_reads", c.file_reads},       {"seqlock_retries", c.seqlock_retries},
          {"probe_steps", c.probe_steps},     {"bytes_appended", c.bytes_appended},
          {"budget_bytes_in_use", c.budget_bytes_in_use}};
}

// Per-thread counters, one cache line each. Each slot has a single writer, so
// updates are plain load+store; snapshots sum relaxed loads.
class CounterBank {
 public:
  enum Field : std::size_t { ring_hits, inline_hits, file_reads, seqlock_retries, probe_steps, bytes_appended, kFields };

  explicit CounterBank(std::uint32_t threads) : lines_(threads + 1) {}

  void add(ThreadId tid, Field f, std::uint64_t n = 1) noexcept {
    auto& c = lines_[tid].v[f];
    c.store(c.load(std::memory_order_relaxed) + n, std::memory_order_relaxed);
  }

  // Shared line for callers without a tid (checkpoint, recovery).
  void add_shared(Field f, std::uint64_t n = 1) noexcept {
    lines_.back().v[f].fetch_add(n, std::memory_order_relaxed);
  }

  IndicatorCounters snapshot() const noexcept {
    std::array<std::uint64_t, kFields> sum{};
    for (const auto& line : lines_)
      for (std::size_t i = 0; i < kFields; ++i) sum[i] += line.v[i].load(std::memory_order_relaxed);
    IndicatorCounters c;
    c.ring_hits = sum[ring_hits];
    c.inline_hits = sum[inline_hits];
    c.file_reads = sum[file_reads];
    c.seqlock_retries = sum[seqlock_retries];
    c.probe_steps = sum[probe_steps];
    c.bytes_appended = sum[bytes_appended];
    return c;
  }

  std::size_t bytes() const noexcept { return lines_.size() * sizeof(Line); }

 private:
  struct alignas(64) Line {
    std::array<std::atomic<std::uint64_t>, kFields> v{};
  };
  std::vector<Line> lines_;
};

struct StoreConfig {
  std::filesystem::path dir;
  std::uint32_t threads = 1;
  std::uint64_t expected_keys = 1;
  std::uint64_t effective_budget = 0;  // bytes; 0 = unbounded (sizing uses defaults)
  std::uint64_t ring_bytes = 0;        // per-thread ring override; 0 = derive from budget
  bool self_check = false;             // compare ring bytes against file bytes on ring hits
  std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

class KvStore {
 public:
  virtual ~KvStore() = default;

  virtual std::string name() const = 0;

  virtual Completion read(ThreadId tid, Key key, ValueBuffer& out) = 0;
  virtual Completion upsert(ThreadId tid, Key key, ByteView value) = 0;
  virtual Completion rmw(ThreadId tid, Key key, Modifier modifier) = 0;
  virtual Completion remove(ThreadId tid, Key key) = 0;

  virtual CheckpointId checkpoint() = 0;
  // Exclusive: no operation may run concurrently with these two.
  virtual void simulate_crash(CrashMode mode) = 0;
  virtual void recover() = 0;

  virtual IndicatorCounters snapshot_indicators() const = 0;
};

}  // namespace kvbench
