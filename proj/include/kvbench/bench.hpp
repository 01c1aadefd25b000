#pragma once

// Load, warm up, then drive timed closed-loop traffic; repeat from fresh
// stores and report throughput, latency, counter deltas and budget peaks.
// Also the apparatus checks: driver parity, environment snapshots, and the
// dispersion guard.

#include <pthread.h>
#include <sched.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "kvbench/common/files.hpp"
#include "kvbench/gate.hpp"
#include "kvbench/spec_cards.hpp"
#include "kvbench/store_api.hpp"
#include "kvbench/stores.hpp"
#include "kvbench/value_fabric.hpp"
#include "kvbench/workload.hpp"

namespace kvbench {

inline constexpr double kNoisyThreshold = 0.10;

// ---- driver parity ---------------------------------------------------------

// What a store-facing driver does to the offered load before it reaches the
// store. Two drivers under comparison must agree on all of it.
struct DriverConfig {
  std::string store;
  std::uint32_t max_value_bytes = kMaxValueBytes;  // payloads are clipped to this
  ValueSizeSpec value_size = FixedSize{};
  std::uint64_t stream_seed = 0;

  static DriverConfig for_card(const std::string& store, const SpecCard& card, const ValueFabric& fabric) {
    DriverConfig d;
    d.store = store;
    d.value_size = card.workload.value_size;
    d.stream_seed = fabric.derive_seed("stream", 0);
    return d;
  }

  std::uint32_t clip(std::uint32_t len) const noexcept { return std::min(len, max_value_bytes); }
};

// Throws ParityError naming the first constant that differs.
inline void driver_parity_check(const DriverConfig& a, const DriverConfig& b) {
  if (a.max_value_bytes != b.max_value_bytes) throw ParityError("max_value_bytes");
  if (a.value_size != b.value_size) throw ParityError("value_size_spec");
  if (a.stream_seed != b.stream_seed) throw ParityError("stream_seed");
  // Same spec can still be realized differently; compare what actually gets offered.
  ValueSizeSampler sa(a.value_size);
  ValueSizeSampler sb(b.value_size);
  std::mt19937_64 ra(a.stream_seed);
  std::mt19937_64 rb(b.stream_seed);
  for (int i = 0; i < 4096; ++i)
    if (a.clip(sa.sample(ra)) != b.clip(sb.sample(rb))) throw ParityError("value_size_realization");
}

// Both sides built from one card and one secret: parity holds by construction
// unless a driver was altered afterwards.
inline void driver_parity_check(const SpecCard& card, const ValueFabric& fabric, const std::string& store_a,
                                const std::string& store_b) {
  driver_parity_check(DriverConfig::for_card(store_a, card, fabric), DriverConfig::for_card(store_b, card, fabric));
}

// ---- environment snapshots -------------------------------------------------

using EnvSnapshot = std::map<std::string, std::string>;

struct EnvChange {
  std::string name;
  std::optional<std::string> before;
  std::optional<std::string> after;
};
using EnvDiff = std::vector<EnvChange>;

inline constexpr std::string_view kUnreadable = "<unreadable>";

// Every regular file under `root`, keyed by relative path. Values are trimmed
// and capped at 4 KiB. Files that cannot be read (write-only tunables) are
// recorded as unreadable rather than skipped.
inline EnvSnapshot take_snapshot(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw ConfigError("snapshot dir " + root.string() + " is not a readable directory");
  fs::directory_iterator probe(root, ec);
  if (ec) throw ConfigError("snapshot dir " + root.string() + ": " + ec.message());

  EnvSnapshot snap;
  auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied, ec);
  if (ec) throw ConfigError("snapshot dir " + root.string() + ": " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file(ec)) continue;
    const std::string name = fs::relative(it->path(), root, ec).string();
    std::ifstream in(it->path(), std::ios::binary);
    std::string value(4096, '\0');
    if (in) in.read(value.data(), static_cast<std::streamsize>(value.size()));
    if (!in && !in.eof()) {
      snap[name] = std::string(kUnreadable);
      continue;
    }
    value.resize(static_cast<std::size_t>(in.gcount()));
    while (!value.empty() && std::isspace(static_cast<unsigned char>(value.back()))) value.pop_back();
    snap[name] = value;
  }
  return snap;
}

inline EnvDiff diff_snapshots(const EnvSnapshot& before, const EnvSnapshot& after) {
  EnvDiff out;
  for (const auto& [k, v] : before) {
    auto it = after.find(k);
    if (it == after.end()) {
      out.push_back({k, v, std::nullopt});
    } else if (it->second != v) {
      out.push_back({k, v, it->second});
    }
  }
  for (const auto& [k, v] : after)
    if (!before.contains(k)) out.push_back({k, std::nullopt, v});
  return out;
}

// Snapshots `root`, runs `body`, snapshots again and returns the difference.
// The first snapshot happens before `body`, so a bad root fails before any work.
template <typename F>
EnvDiff env_guard(const fs::path& root, F&& body) {
  const EnvSnapshot before = take_snapshot(root);
  std::forward<F>(body)();
  return diff_snapshots(before, take_snapshot(root));
}

inline nlohmann::json to_json(const EnvDiff& d) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& c : d)
    out.push_back({{"name", c.name},
                   {"before", c.before ? nlohmann::json(*c.before) : nlohmann::json(nullptr)},
                   {"after", c.after ? nlohmann::json(*c.after) : nlohmann::json(nullptr)}});
  return out;
}

// ---- statistics ------------------------------------------------------------

struct PairedRunStats {
  std::vector<double> throughputs_mops;
  double mean = 0;
  double stddev = 0;  // sample standard deviation
  double cv = 0;
  bool noisy = false;
};

inline PairedRunStats paired_stats(std::vector<double> xs, double threshold = kNoisyThreshold) {
  PairedRunStats s;
  s.throughputs_mops = std::move(xs);
  const auto n = static_cast<double>(s.throughputs_mops.size());
  if (n == 0) return s;
  for (double x : s.throughputs_mops) s.mean += x;
  s.mean /= n;
  if (n >= 2) {
    double ss = 0;
    for (double x : s.throughputs_mops) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / (n - 1));
  }
  s.cv = s.mean > 0 ? s.stddev / s.mean : 0;
  s.noisy = s.cv > threshold;
  return s;
}

inline nlohmann::json to_json(const PairedRunStats& s) {
  return {{"throughputs_mops", s.throughputs_mops}, {"mean", s.mean},   {"stddev", s.stddev},
          {"cv", s.cv},                             {"noisy", s.noisy}};
}

// Log-linear latency histogram in nanoseconds: 16 sub-buckets per power of two.
class LatencyHistogram {
 public:
  void record(std::uint64_t ns) noexcept { ++buckets_[index(ns)]; }
  void merge(const LatencyHistogram& o) noexcept {
    for (std::size_t i = 0; i < kBuckets; ++i) buckets_[i] += o.buckets_[i];
  }
  std::uint64_t count() const noexcept {
    std::uint64_t n = 0;
    for (auto b : buckets_) n += b;
    return n;
  }
  // Upper edge of the bucket holding quantile q, in microseconds.
  double quantile_us(double q) const noexcept {
    const std::uint64_t n = count();
    if (n == 0) return 0;
    const auto target = static_cast<std::uint64_t>(std::ceil(q * static_cast<double>(n)));
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < kBuckets; ++i) {
      acc += buckets_[i];
      if (acc >= std::max<std::uint64_t>(1, target)) return static_cast<double>(upper(i)) / 1000.0;
    }
    return static_cast<double>(upper(kBuckets - 1)) / 1000.0;
  }

  static std::size_t index(std::uint64_t ns) noexcept {
    if (ns < 16) return static_cast<std::size_t>(ns);
    const int msb = 63 - std::countl_zero(ns);
    const std::uint64_t sub = (ns >> (msb - 4)) & 15;
    return static_cast<std::size_t>((msb - 3) * 16 + sub);
  }
  static std::uint64_t upper(std::size_t i) noexcept {
    if (i < 16) return i;
    const std::size_t msb = i / 16 + 3;
    const std::uint64_t sub = i % 16;
    return ((16 + sub + 1) << (msb - 4)) - 1;
  }

 private:
  static constexpr std::size_t kBuckets = 61 * 16;
  std::array<std::uint64_t, kBuckets> buckets_{};
};

// ---- budget monitor --------------------------------------------------------

inline std::uint64_t resident_bytes() {
  std::ifstream in("/proc/self/statm");
  std::uint64_t size = 0;
  std::uint64_t resident = 0;
  if (!(in >> size >> resident)) return 0;
  return resident * static_cast<std::uint64_t>(::sysconf(_SC_PAGESIZE));
}

// Samples the store gauge and the process RSS growth since construction.
class BudgetMonitor {
 public:
  BudgetMonitor(const KvStore& store, std::uint32_t hz)
      : store_(store), rss_base_(resident_bytes()), period_(std::chrono::microseconds(1'000'000 / std::max(1u, hz))) {
    sample();
    thread_ = std::thread([this] {
      std::unique_lock lock(mu_);
      while (!stop_) {
        cv_.wait_for(lock, period_, [this] { return stop_; });
        lock.unlock();
        sample();
        lock.lock();
      }
    });
  }
  ~BudgetMonitor() { stop(); }
  BudgetMonitor(const BudgetMonitor&) = delete;
  BudgetMonitor& operator=(const BudgetMonitor&) = delete;

  void stop() {
    {
      std::lock_guard lock(mu_);
      if (stop_) return;
      stop_ = true;
    }
    cv_.notify_all();
    thread_.join();
    sample();
  }

  std::uint64_t peak() const noexcept { return std::max(peak_gauge_.load(), peak_rss_.load()); }
  std::uint64_t peak_gauge() const noexcept { return peak_gauge_.load(); }
  std::uint64_t peak_rss_delta() const noexcept { return peak_rss_.load(); }
  std::uint64_t samples() const noexcept { return samples_.load(); }
  double hz() const noexcept { return 1e6 / static_cast<double>(period_.count()); }

 private:
  void sample() {
    const std::uint64_t gauge = store_.snapshot_indicators().budget_bytes_in_use;
    const std::uint64_t rss = resident_bytes();
    const std::uint64_t delta = rss > rss_base_ ? rss - rss_base_ : 0;
    if (gauge > peak_gauge_.load()) peak_gauge_.store(gauge);
    if (delta > peak_rss_.load()) peak_rss_.store(delta);
    samples_.fetch_add(1);
  }

  const KvStore& store_;
  std::uint64_t rss_base_;
  std::chrono::microseconds period_;
  std::atomic<std::uint64_t> peak_gauge_{0};
  std::atomic<std::uint64_t> peak_rss_{0};
  std::atomic<std::uint64_t> samples_{0};
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::thread thread_;
};

// ---- authorization ---------------------------------------------------------

inline std::string card_fingerprint(const SpecCard& card) {
  const std::string s = serialize(card);
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc32_of(as_bytes(s)));
  return buf;
}

// Proof that a bench may run: a passing gate for this exact (store, card), or
// an explicit skip that watermarks the report UNGATED.
class BenchAuthorization {
 public:
  static BenchAuthorization from_gate(const GateReport& report, const SpecCard& card) {
    if (!report.pass()) {
      std::string failing;
      for (const auto& n : report.failing_tests()) failing += (failing.empty() ? "" : ", ") + n;
      throw GateRequired("GATE-FAIL for " + report.store + ": " + failing);
    }
    BenchAuthorization a;
    a.store_ = report.store;
    a.card_ = card_fingerprint(card);
    return a;
  }
  static BenchAuthorization unsafe_skip_gate() {
    BenchAuthorization a;
    a.ungated_ = true;
    return a;
  }

  bool ungated() const noexcept { return ungated_; }

  void check(const std::string& store, const SpecCard& card) const {
    if (ungated_) return;
    if (store != store_) throw GateRequired("no passing gate for store " + store + " in this session");
    if (card_fingerprint(card) != card_) throw GateRequired("gate passed for a different card");
  }

 private:
  BenchAuthorization() = default;
  bool ungated_ = false;
  std::string store_;
  std::string card_;
};

// ---- run_bench -------------------------------------------------------------

struct BenchOptions {
  std::uint32_t paired_runs = 6;
  double warmup_sec = 5.0;
  double duration_sec = 0;  // 0: the card's duration
  std::uint32_t threads = 0;  // 0: the card's cpu_threads
  std::uint32_t monitor_hz = 20;
  bool pin_threads = true;
  double noisy_threshold = kNoisyThreshold;
  std::uint64_t ring_bytes = 0;
  std::optional<std::uint32_t> max_value_bytes;  // driver clip override
  fs::path scratch_root;
  fs::path snapshot_dir;  // empty: environment guard off (recorded)
  std::vector<std::string> watermarks;
};

struct RunResult {
  double throughput_mops = 0;
  std::uint64_t ops = 0;
  double timed_sec = 0;
  double load_sec = 0;
  double warmup_sec = 0;
  double latency_p50_us = 0;
  double latency_p99_us = 0;
  IndicatorCounters counters;  // delta over the timed window
  std::uint64_t budget_peak_bytes = 0;
  std::uint64_t peak_gauge_bytes = 0;
  std::uint64_t peak_rss_delta_bytes = 0;
  std::uint64_t monitor_samples = 0;
  std::array<std::uint64_t, 4> ops_by_kind{};
};

struct IndicatorReport {
  std::string store;
  std::string workload;
  std::uint64_t memory_budget_bytes = 0;
  std::uint64_t effective_budget = 0;
  std::uint32_t threads = 0;
  double throughput_mops = 0;  // mean over runs
  double latency_p50_us = 0;
  double latency_p99_us = 0;
  IndicatorCounters counters;  // summed over runs; gauge is the last
  std::uint64_t budget_peak_bytes = 0;
  PairedRunStats paired_run_stats;
  std::vector<RunResult> runs;
  bool pinned = false;
  std::string pinning;
  double monitor_hz = 0;
  std::vector<std::string> watermarks;
  std::optional<EnvDiff> env_diff;  // nullopt: guard off
  double warmup_sec = 0;
  double duration_sec = 0;
};

inline nlohmann::json to_json(const RunResult& r) {
  nlohmann::json kinds = nlohmann::json::object();
  for (Op op : kAllOps) kinds[std::string(op_name(op))] = r.ops_by_kind[static_cast<std::size_t>(op)];
  return {{"throughput_mops", r.throughput_mops},
          {"ops", r.ops},
          {"ops_by_kind", kinds},
          {"timed_sec", r.timed_sec},
          {"load_sec_excluded", r.load_sec},
          {"warmup_sec_excluded", r.warmup_sec},
          {"latency_p50_us", r.latency_p50_us},
          {"latency_p99_us", r.latency_p99_us},
          {"counters", to_json(r.counters)},
          {"budget_peak_bytes", r.budget_peak_bytes},
          {"peak_gauge_bytes", r.peak_gauge_bytes},
          {"peak_rss_delta_bytes", r.peak_rss_delta_bytes},
          {"monitor_samples", r.monitor_samples}};
}

inline nlohmann::json to_json(const IndicatorReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) runs.push_back(to_json(run));
  return {{"kind", "bench"},
          {"store", r.store},
          {"workload", r.workload},
          {"memory_budget_bytes", r.memory_budget_bytes},
          {"effective_budget", r.effective_budget},
          {"threads", r.threads},
          {"throughput_mops", r.throughput_mops},
          {"latency_p50_us", r.latency_p50_us},
          {"latency_p99_us", r.latency_p99_us},
          {"counters", to_json(r.counters)},
          {"budget_peak_bytes", r.budget_peak_bytes},
          {"paired_run_stats", to_json(r.paired_run_stats)},
          {"runs", runs},
          {"warmup_sec", r.warmup_sec},
          {"duration_sec", r.duration_sec},
          {"pinning", {{"applied", r.pinned}, {"detail", r.pinning}}},
          {"monitor_hz", r.monitor_hz},
          {"watermarks", r.watermarks},
          {"env_guard", r.env_diff ? nlohmann::json{{"enabled", true}, {"diff", to_json(*r.env_diff)}}
                                   : nlohmann::json{{"enabled", false}}},
          {"hardware_counters", "not collected; software counters only"}};
}

namespace bench_detail {

inline bool pin_to_cpu(std::uint32_t tid) {
  const unsigned n = std::max(1u, std::thread::hardware_concurrency());
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(tid % n, &set);
  return ::pthread_setaffinity_np(::pthread_self(), sizeof set, &set) == 0;
}

enum Phase : int { kLoad = 0, kWarmup = 1, kTimed = 2, kStop = 3 };

// Upserts, rmw successors and reads all go through here. One per driver thread.
class Driver {
 public:
  Driver(KvStore& store, const ValueFabric& fabric, const DriverConfig& dc, ThreadId tid)
      : store_(store), fabric_(fabric), dc_(dc), tid_(tid) {}

  void apply(const OperationRecord& rec) {
    const std::uint32_t len = dc_.clip(rec.payload_len);
    switch (rec.op) {
      case Op::read:
        store_.read(tid_, rec.key, out_);
        break;
      case Op::upsert: {
        auto v = value_.prepare(len);
        fabric_.write_envelope(v, rec.key, tid_, rec.seq);
        store_.upsert(tid_, rec.key, value_.view());
        break;
      }
      case Op::rmw: {
        auto modify = [&](std::optional<ByteView>, ValueBuffer& next) {
          fabric_.write_envelope(next.prepare(len), rec.key, tid_, rec.seq);
        };
        store_.rmw(tid_, rec.key, modify);
        break;
      }
      case Op::remove:
        store_.remove(tid_, rec.key);
        break;
    }
  }

 private:
  KvStore& store_;
  const ValueFabric& fabric_;
  const DriverConfig& dc_;
  ThreadId tid_;
  ValueBuffer out_;
  ValueBuffer value_;
};

// Endless per-thread source for the timed window: a generated stream, or the
// thread's share of a trace, restarted when exhausted.
class Source {
 public:
  Source(const SpecCard& card, const ValueFabric& fabric, ThreadId tid, std::uint32_t threads, std::uint64_t first_seq)
      : fabric_(fabric), tid_(tid), threads_(threads) {
    if (const auto* t = std::get_if<TraceReplay>(&card.workload.distribution)) {
      trace_path_ = t->path;
      trace_ = std::make_unique<TraceReader>(trace_path_, fabric, tid, threads);
    } else {
      stream_ = std::make_unique<OperationStream>(card.workload, fabric, tid, threads, first_seq);
    }
  }

  OperationRecord next() {
    if (stream_) return stream_->next();
    OperationRecord rec;
    for (int attempt = 0; attempt < 2; ++attempt) {
      if (trace_->next(rec)) return rec;
      trace_ = std::make_unique<TraceReader>(trace_path_, fabric_, tid_, threads_);
    }
    throw ConfigError("trace " + trace_path_ + " has no records for thread " + std::to_string(tid_));
  }

 private:
  const ValueFabric& fabric_;
  ThreadId tid_;
  std::uint32_t threads_;
  std::string trace_path_;
  std::unique_ptr<TraceReader> trace_;
  std::unique_ptr<OperationStream> stream_;
};

inline RunResult run_once(const StoreFactory& factory, const SpecCard& card, const ValueFabric& fabric,
                          const DriverConfig& dc, const BenchOptions& opts, std::uint32_t threads, double duration,
                          std::uint32_t run_index, std::atomic<bool>& pinned_all) {
  using Clock = std::chrono::steady_clock;
  const std::uint64_t budget = card.environment.effective_budget();
  ScratchDir dir(opts.scratch_root.empty() ? default_scratch_root() : opts.scratch_root, "bench");
  StoreConfig sc;
  sc.dir = dir.path();
  sc.threads = threads;
  sc.expected_keys = card.workload.num_keys;
  sc.effective_budget = budget;
  sc.ring_bytes = opts.ring_bytes;
  sc.seed = fabric.derive_seed("store", run_index);

  std::unique_ptr<KvStore> store;
  try {
    store = factory(sc);
  } catch (const CapacityError& e) {
    if (e.required_bytes() == 0) throw;
    throw BudgetExceeded(e.required_bytes(), budget, e.what());
  }
  BudgetMonitor monitor(*store, opts.monitor_hz);

  std::atomic<int> phase{kLoad};
  std::atomic<std::uint32_t> loaded{0};
  std::vector<LatencyHistogram> hist(threads);
  std::vector<std::array<std::uint64_t, 4>> kinds(threads);
  std::vector<std::uint64_t> timed_ops(threads, 0);

  auto body = [&](std::uint32_t t) {
    if (opts.pin_threads && !pin_to_cpu(t)) pinned_all.store(false);
    const auto tid = static_cast<ThreadId>(t);
    Driver driver(*store, fabric, dc, tid);
    LoadStream load(card.workload, fabric, tid, threads);
    OperationRecord rec;
    while (load.next(rec)) driver.apply(rec);
    loaded.fetch_add(1);
    while (phase.load(std::memory_order_acquire) == kLoad) std::this_thread::yield();

    Source source(card, fabric, tid, threads, load.next_seq());
    auto& h = hist[t];
    auto& k = kinds[t];
    std::uint64_t n = 0;
    for (;;) {
      const int p = phase.load(std::memory_order_relaxed);
      if (p == kStop) break;
      const OperationRecord op = source.next();
      if (p == kTimed) {
        const auto a = Clock::now();
        driver.apply(op);
        h.record(static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - a).count()));
        ++k[static_cast<std::size_t>(op.op)];
        ++n;
      } else {
        driver.apply(op);
      }
    }
    timed_ops[t] = n;
  };

  RunResult r;
  const auto t_load = Clock::now();
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::uint32_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        body(t);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        phase.store(kStop);
        loaded.fetch_add(1);
      }
    });

  auto sleep_for = [&](double sec) {
    const auto until = Clock::now() + std::chrono::duration<double>(sec);
    while (Clock::now() < until && phase.load() != kStop)
      std::this_thread::sleep_for(std::min<Clock::duration>(std::chrono::milliseconds(20), std::chrono::duration_cast<Clock::duration>(until - Clock::now())));
  };

  while (loaded.load() < threads) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  r.load_sec = std::chrono::duration<double>(Clock::now() - t_load).count();
  int expected = kLoad;
  phase.compare_exchange_strong(expected, kWarmup);
  const auto t_warm = Clock::now();
  sleep_for(opts.warmup_sec);
  r.warmup_sec = std::chrono::duration<double>(Clock::now() - t_warm).count();

  const IndicatorCounters before = store->snapshot_indicators();
  expected = kWarmup;
  phase.compare_exchange_strong(expected, kTimed);
  const auto t_timed = Clock::now();
  sleep_for(duration);
  phase.store(kStop);
  r.timed_sec = std::chrono::duration<double>(Clock::now() - t_timed).count();
  for (auto& th : pool) th.join();
  const IndicatorCounters after = store->snapshot_indicators();
  monitor.stop();
  if (error) std::rethrow_exception(error);

  LatencyHistogram all;
  for (std::uint32_t t = 0; t < threads; ++t) {
    all.merge(hist[t]);
    r.ops += timed_ops[t];
    for (std::size_t i = 0; i < 4; ++i) r.ops_by_kind[i] += kinds[t][i];
  }
  r.throughput_mops = r.timed_sec > 0 ? static_cast<double>(r.ops) / r.timed_sec / 1e6 : 0;
  r.latency_p50_us = all.quantile_us(0.50);
  r.latency_p99_us = all.quantile_us(0.99);
  r.counters = after.delta_since(before);
  r.peak_gauge_bytes = monitor.peak_gauge();
  r.peak_rss_delta_bytes = monitor.peak_rss_delta();
  r.budget_peak_bytes = monitor.peak();
  r.monitor_samples = monitor.samples();
  if (budget != 0 && r.budget_peak_bytes > budget)
    throw BudgetExceeded(r.budget_peak_bytes, budget,
                         "run " + std::to_string(run_index) + " of " + store->name() + "; gauge peak " +
                             std::to_string(r.peak_gauge_bytes) + " B, rss growth peak " +
                             std::to_string(r.peak_rss_delta_bytes) + " B");
  return r;
}

inline void fill_summary(IndicatorReport& rep, double threshold) {
  std::vector<double> tps;
  double p50 = 0;
  double p99 = 0;
  for (const auto& r : rep.runs) {
    tps.push_back(r.throughput_mops);
    p50 += r.latency_p50_us;
    p99 = std::max(p99, r.latency_p99_us);
    rep.counters.ring_hits += r.counters.ring_hits;
    rep.counters.inline_hits += r.counters.inline_hits;
    rep.counters.file_reads += r.counters.file_reads;
    rep.counters.seqlock_retries += r.counters.seqlock_retries;
    rep.counters.probe_steps += r.counters.probe_steps;
    rep.counters.bytes_appended += r.counters.bytes_appended;
    rep.counters.budget_bytes_in_use = r.counters.budget_bytes_in_use;
    rep.budget_peak_bytes = std::max(rep.budget_peak_bytes, r.budget_peak_bytes);
  }
  rep.paired_run_stats = paired_stats(std::move(tps), threshold);
  rep.throughput_mops = rep.paired_run_stats.mean;
  rep.latency_p50_us = rep.runs.empty() ? 0 : p50 / static_cast<double>(rep.runs.size());
  rep.latency_p99_us = p99;
  if (rep.paired_run_stats.noisy) rep.watermarks.push_back("NOISY");
}

}  // namespace bench_detail

// Runs the timed benchmark `opts.paired_runs` times, each from a fresh store.
// Throws GateRequired, BudgetExceeded or EnvDirty; a throwing run yields no report.
inline IndicatorReport run_bench(const StoreFactory& factory, const std::string& store_name, const SpecCard& card,
                                 const RunSecret& secret, const BenchOptions& opts, const BenchAuthorization& auth) {
  auth.check(store_name, card);
  if (opts.paired_runs < 1) throw ConfigError("paired_runs must be >= 1");
  const ValueFabric fabric(secret);
  DriverConfig dc = DriverConfig::for_card(store_name, card, fabric);
  if (opts.max_value_bytes) dc.max_value_bytes = *opts.max_value_bytes;

  IndicatorReport rep;
  rep.store = store_name;
  rep.workload = workload_label(card.workload);
  rep.memory_budget_bytes = card.environment.memory_budget_bytes;
  rep.effective_budget = card.environment.effective_budget();
  rep.threads = opts.threads ? opts.threads : card.environment.cpu_threads;
  rep.warmup_sec = opts.warmup_sec;
  rep.duration_sec = opts.duration_sec > 0 ? opts.duration_sec : card.workload.duration_sec;
  rep.monitor_hz = opts.monitor_hz;
  rep.watermarks = opts.watermarks;
  if (auth.ungated()) rep.watermarks.push_back("UNGATED");
  if (rep.threads == 0 || rep.threads > kMaxThreads) throw ConfigError("thread count must be in [1, 64]");

  std::atomic<bool> pinned_all{opts.pin_threads};
  auto runs = [&] {
    for (std::uint32_t i = 0; i < opts.paired_runs; ++i)
      rep.runs.push_back(
          bench_detail::run_once(factory, card, fabric, dc, opts, rep.threads, rep.duration_sec, i, pinned_all));
  };
  if (opts.snapshot_dir.empty()) {
    runs();
  } else {
    rep.env_diff = env_guard(opts.snapshot_dir, runs);
    if (!rep.env_diff->empty()) {
      std::string names;
      for (const auto& c : *rep.env_diff) names += (names.empty() ? "" : ", ") + c.name;
      throw EnvDirty("environment changed during the run: " + names);
    }
  }
  rep.pinned = pinned_all.load();
  rep.pinning = !opts.pin_threads ? "disabled" : rep.pinned ? "thread i on cpu i mod ncpu" : "pthread_setaffinity_np failed";
  bench_detail::fill_summary(rep, opts.noisy_threshold);
  return rep;
}

inline IndicatorReport run_bench(const std::string& selector, const SpecCard& card, const RunSecret& secret,
                                 const BenchOptions& opts, const BenchAuthorization& auth) {
  return run_bench([&](const StoreConfig& sc) { return make_store(selector, sc); }, selector, card, secret, opts,
                   auth);
}

// ---- comparative mode ------------------------------------------------------

struct ComparisonReport {
  IndicatorReport a;
  IndicatorReport b;
  std::vector<double> ratios;  // a/b per pair
  PairedRunStats ratio_stats;
};

inline nlohmann::json to_json(const ComparisonReport& c) {
  return {{"kind", "comparison"},
          {"a", to_json(c.a)},
          {"b", to_json(c.b)},
          {"ratios_a_over_b", c.ratios},
          {"ratio_stats", to_json(c.ratio_stats)}};
}

// Alternates single runs of a and b so both see the same drift. Refuses
// fewer than two pairs: one pair has no dispersion to report.
inline ComparisonReport run_comparison(const std::string& store_a, const std::string& store_b, const SpecCard& card,
                                       const RunSecret& secret, const BenchOptions& opts,
                                       const BenchAuthorization& auth_a, const BenchAuthorization& auth_b) {
  if (opts.paired_runs < 2)
    throw ConfigError("comparative mode needs paired_runs >= 2, got " + std::to_string(opts.paired_runs));
  driver_parity_check(card, ValueFabric(secret), store_a, store_b);
  auth_a.check(store_a, card);
  auth_b.check(store_b, card);
  BenchOptions one = opts;
  one.paired_runs = 1;
  ComparisonReport c;
  for (std::uint32_t i = 0; i < opts.paired_runs; ++i) {
    auto ra = run_bench(store_a, card, secret, one, auth_a);
    auto rb = run_bench(store_b, card, secret, one, auth_b);
    if (i == 0) {
      c.a = ra;
      c.b = rb;
      c.a.runs.clear();
      c.b.runs.clear();
    }
    c.a.runs.push_back(ra.runs.front());
    c.b.runs.push_back(rb.runs.front());
    c.ratios.push_back(rb.throughput_mops > 0 ? ra.throughput_mops / rb.throughput_mops : 0);
  }
  for (auto* r : {&c.a, &c.b}) {
    r->counters = {};
    r->budget_peak_bytes = 0;
    std::erase(r->watermarks, "NOISY");
    bench_detail::fill_summary(*r, opts.noisy_threshold);
  }
  c.ratio_stats = paired_stats(c.ratios, opts.noisy_threshold);
  return c;
}

}  // namespace kvbench
