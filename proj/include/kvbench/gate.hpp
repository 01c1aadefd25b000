#pragma once

// The correctness gate. A store must pass every test here, with zero
// violations, before any throughput number is reported for it.
//
//   retention          every loaded key reads back as its own envelope
//   delete_retention   deleted keys read NotFound, the rest still validate
//   {upsert,rmw}_monotonicity_{fuzzy_checkpoint,no_checkpoint}
//                      after crash + recover, each writer's surviving writes
//                      are a prefix of its issue order
//   torn_read_stress   concurrent readers never see a value that fails validation

#include <algorithm>
#include <atomic>
#include <chrono>
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
#include "kvbench/spec_cards.hpp"
#include "kvbench/store_api.hpp"
#include "kvbench/value_fabric.hpp"
#include "kvbench/workload.hpp"

namespace kvbench {

using StoreFactory = std::function<std::unique_ptr<KvStore>(const StoreConfig&)>;

enum class TornProfile : std::uint8_t {
  standard,   // sizes 0..256 B over 1024 hot keys
  amplified,  // 4 KiB values over 64 hot keys, half of each writer's traffic on its own keys
};

struct GateConfig {
  std::uint64_t retention_keys = 1'000'000;
  ValueSizeSpec retention_sizes = FixedSize{100};
  double delete_fraction = 0.1;
  std::uint32_t load_threads = 1;

  std::uint32_t crash_writers = 4;
  std::uint64_t crash_keys_per_writer = 4096;
  std::uint64_t crash_ops_per_writer = 20'000;  // no-checkpoint runs
  std::uint32_t fuzzy_lead_ms = 20;             // writes before the checkpoint starts
  std::uint32_t crash_min_ms = 10;
  std::uint32_t crash_max_ms = 100;
  std::uint32_t crash_max_value = 256;
  double crash_delete_fraction = 0.05;  // upsert tests only
  std::uint64_t crash_ring_bytes = 256ULL << 10;

  std::uint32_t torn_readers = 8;
  std::uint32_t torn_writers = 8;
  std::uint64_t torn_min_reads = 10'000'000;
  TornProfile torn_profile = TornProfile::standard;

  // Stop a test at its first violation. Counts are then lower bounds.
  bool stop_on_violation = false;
  fs::path scratch_root;

  static GateConfig from_card(const SpecCard& card) {
    GateConfig g;
    g.retention_keys = card.workload.num_keys;
    g.retention_sizes = card.workload.value_size;
    g.load_threads = card.environment.cpu_threads;
    return g;
  }
};

struct Violation {
  std::string kind;
  Key key = 0;
  ThreadId thread = 0;
  std::uint64_t seq = 0;
  std::string detail;
};

struct TestResult {
  std::string name;
  bool pass = true;
  std::map<std::string, std::uint64_t> violations;
  std::optional<Violation> first;
  std::uint64_t reads_validated = 0;
  std::uint64_t writes_issued = 0;
  double seconds = 0;
  nlohmann::json metadata = nlohmann::json::object();

  std::uint64_t violation_count() const noexcept {
    std::uint64_t n = 0;
    for (const auto& [k, v] : violations) n += v;
    return n;
  }
};

struct GateReport {
  std::string store;
  std::vector<TestResult> tests;
  nlohmann::json parameters = nlohmann::json::object();

  bool pass() const noexcept {
    return !tests.empty() && std::all_of(tests.begin(), tests.end(), [](const TestResult& t) {
             return t.pass && t.violation_count() == 0;
           });
  }
  std::vector<std::string> failing_tests() const {
    std::vector<std::string> out;
    for (const auto& t : tests)
      if (!t.pass || t.violation_count() > 0) out.push_back(t.name);
    return out;
  }
  const TestResult* find(std::string_view name) const noexcept {
    for (const auto& t : tests)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline nlohmann::json to_json(const Violation& v) {
  return {{"kind", v.kind}, {"key", v.key}, {"thread", v.thread}, {"seq", v.seq}, {"detail", v.detail}};
}

inline nlohmann::json to_json(const TestResult& t) {
  nlohmann::json j{{"name", t.name},
                   {"pass", t.pass && t.violation_count() == 0},
                   {"violation_count", t.violation_count()},
                   {"violations", t.violations},
                   {"reads_validated", t.reads_validated},
                   {"writes_issued", t.writes_issued},
                   {"seconds", t.seconds},
                   {"metadata", t.metadata}};
  j["first_violation"] = t.first ? to_json(*t.first) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json to_json(const GateReport& r) {
  nlohmann::json tests = nlohmann::json::array();
  std::uint64_t reads = 0;
  std::uint64_t writes = 0;
  for (const auto& t : r.tests) {
    tests.push_back(to_json(t));
    reads += t.reads_validated;
    writes += t.writes_issued;
  }
  return {{"kind", "gate"},
          {"store", r.store},
          {"verdict", r.pass() ? "GATE-PASS" : "GATE-FAIL"},
          {"pass", r.pass()},
          {"tests", tests},
          {"totals", {{"reads_validated", reads}, {"writes_issued", writes}}},
          {"parameters", r.parameters}};
}

namespace gate_detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Thread-safe violation sink; violations are rare so a mutex is fine.
class Recorder {
 public:
  void add(const std::string& kind, Key key, ThreadId thread, std::uint64_t seq, std::string detail = {}) {
    std::lock_guard lock(mu_);
    ++counts_[kind];
    if (!first_) first_ = Violation{kind, key, thread, seq, std::move(detail)};
    any_.store(true, std::memory_order_relaxed);
  }
  bool any() const noexcept { return any_.load(std::memory_order_relaxed); }
  void into(TestResult& r) {
    std::lock_guard lock(mu_);
    r.violations = counts_;
    r.first = first_;
    r.pass = counts_.empty();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::uint64_t> counts_;
  std::optional<Violation> first_;
  std::atomic<bool> any_{false};
};

inline constexpr std::uint64_t kAbsent = 0;

inline std::uint64_t signature(ByteView bytes) noexcept {
  static const Block16 k{};
  return siphash64(k, bytes) | 1;
}

template <typename F>
void run_threads(std::uint32_t n, F&& body) {
  std::vector<std::thread> threads;
  threads.reserve(n);
  std::exception_ptr error;
  std::mutex error_mu;
  for (std::uint32_t i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::string describe(const std::exception& e) { return e.what(); }

}  // namespace gate_detail

// Loads retention_keys keys, reads every one back, then deletes a fraction and
// checks those read NotFound. Produces the retention and delete_retention results.
inline std::vector<TestResult> retention_check(const StoreFactory& factory, const GateConfig& cfg,
                                               const ValueFabric& fabric) {
  using namespace gate_detail;
  const auto t0 = Clock::now();
  TestResult retention;
  retention.name = "retention";
  TestResult deletes;
  deletes.name = "delete_retention";
  Recorder rec;
  Recorder del_rec;

  ScratchDir dir(cfg.scratch_root.empty() ? default_scratch_root() : cfg.scratch_root, "retention");
  const std::uint32_t threads = std::max<std::uint32_t>(1, cfg.load_threads);
  StoreConfig sc;
  sc.dir = dir.path();
  sc.threads = threads;
  sc.expected_keys = cfg.retention_keys;
  auto store = factory(sc);

  WorkloadCard wl;
  wl.num_keys = cfg.retention_keys;
  wl.value_size = cfg.retention_sizes;
  wl.mix[Op::upsert] = 1.0;

  std::atomic<std::uint64_t> writes{0};
  std::atomic<std::uint64_t> reads{0};
  std::atomic<std::uint64_t> store_errors{0};

  run_threads(threads, [&](std::uint32_t t) {
    ValueBuffer buf;
    LoadStream load(wl, fabric, static_cast<ThreadId>(t), threads);
    OperationRecord r;
    std::uint64_t n = 0;
    while (load.next(r)) {
      fabric.write_envelope(buf.prepare(r.payload_len), r.key, r.thread_id, r.seq);
      try {
        store->upsert(r.thread_id, r.key, buf.view());
      } catch (const Error& e) {
        rec.add("StoreError", r.key, r.thread_id, r.seq, e.what());
        store_errors.fetch_add(1);
        if (cfg.stop_on_violation) return;
      }
      ++n;
    }
    writes.fetch_add(n);
  });

  auto is_deleted = [&](std::uint64_t logical) {
    return static_cast<double>(mix64(logical ^ 0x5bd1e995ULL) >> 11) * 0x1.0p-53 < cfg.delete_fraction;
  };

  // Read back and compare against the exact envelope each key was loaded with.
  run_threads(threads, [&](std::uint32_t t) {
    ValueBuffer out;
    LoadStream load(wl, fabric, static_cast<ThreadId>(t), threads);
    OperationRecord r;
    std::uint64_t n = 0;
    while (load.next(r)) {
      if (cfg.stop_on_violation && rec.any()) break;
      Completion c;
      try {
        c = store->read(static_cast<ThreadId>(t), r.key, out);
      } catch (const Error& e) {
        rec.add("StoreError", r.key, r.thread_id, r.seq, e.what());
        continue;
      }
      ++n;
      if (c.status != Status::found) {
        rec.add("NotFound", r.key, r.thread_id, r.seq);
        continue;
      }
      const Validation v = fabric.validate(c.value, r.key);
      if (!v) {
        rec.add(std::string(verdict_name(v.verdict)), r.key, r.thread_id, r.seq);
        continue;
      }
      if (c.value.size() != r.payload_len) {
        rec.add("WrongLength", r.key, r.thread_id, r.seq);
      } else if (c.value.size() >= kHeaderBytes) {
        const EnvelopeHeader h = ValueFabric::decode_header(c.value);
        if (h.thread_id != r.thread_id || h.seq != r.seq) rec.add("StaleValue", r.key, r.thread_id, r.seq);
      }
    }
    reads.fetch_add(n);
  });
  rec.into(retention);
  retention.reads_validated = reads.load();
  retention.writes_issued = writes.load();
  retention.seconds = seconds_since(t0);
  retention.metadata = {{"keys", cfg.retention_keys}, {"threads", threads},
                        {"value_sizes", describe_value_size(cfg.retention_sizes)}};

  const auto t1 = Clock::now();
  std::atomic<std::uint64_t> deleted{0};
  std::atomic<std::uint64_t> del_reads{0};
  run_threads(threads, [&](std::uint32_t t) {
    LoadStream load(wl, fabric, static_cast<ThreadId>(t), threads);
    OperationRecord r;
    std::uint64_t n = 0;
    while (load.next(r)) {
      if (!is_deleted(r.logical_key)) continue;
      try {
        store->remove(static_cast<ThreadId>(t), r.key);
        ++n;
      } catch (const Error& e) {
        del_rec.add("StoreError", r.key, r.thread_id, r.seq, e.what());
      }
    }
    deleted.fetch_add(n);
  });
  run_threads(threads, [&](std::uint32_t t) {
    ValueBuffer out;
    LoadStream load(wl, fabric, static_cast<ThreadId>(t), threads);
    OperationRecord r;
    std::uint64_t n = 0;
    std::uint64_t i = 0;
    while (load.next(r)) {
      if (cfg.stop_on_violation && del_rec.any()) break;
      const bool gone = is_deleted(r.logical_key);
      // every deleted key, and one in eight of the survivors
      if (!gone && (i++ % 8) != 0) continue;
      Completion c;
      try {
        c = store->read(static_cast<ThreadId>(t), r.key, out);
      } catch (const Error& e) {
        del_rec.add("StoreError", r.key, r.thread_id, r.seq, e.what());
        continue;
      }
      ++n;
      if (gone) {
        if (c.status == Status::found) del_rec.add("NotDeleted", r.key, r.thread_id, r.seq);
      } else if (c.status != Status::found) {
        del_rec.add("NotFound", r.key, r.thread_id, r.seq);
      } else if (const Validation v = fabric.validate(c.value, r.key); !v) {
        del_rec.add(std::string(verdict_name(v.verdict)), r.key, r.thread_id, r.seq);
      }
    }
    del_reads.fetch_add(n);
  });
  del_rec.into(deletes);
  deletes.reads_validated = del_reads.load();
  deletes.writes_issued = deleted.load();
  deletes.seconds = seconds_since(t1);
  deletes.metadata = {{"delete_fraction", cfg.delete_fraction}, {"deleted", deleted.load()}};
  return {retention, deletes};
}

namespace gate_detail {

struct Issued {
  std::uint32_t key_index;  // within the writer's range
  std::uint64_t sig;        // kAbsent for deletes
  std::uint64_t seq;
};

// Decides whether the recovered state of one writer's keys equals the state
// after some prefix of its issue log, with the prefix at least `floor` long.
inline void check_prefix(const std::vector<Issued>& log, const std::vector<std::uint64_t>& recovered,
                         std::uint64_t key_base, const ValueFabric& fabric, ThreadId writer,
                         std::uint64_t floor, Recorder& rec, nlohmann::json& meta) {
  std::vector<std::uint64_t> expected(recovered.size(), kAbsent);
  std::uint64_t mismatch = 0;
  for (std::size_t k = 0; k < recovered.size(); ++k) mismatch += recovered[k] != kAbsent;
  std::optional<std::uint64_t> best = mismatch == 0 ? std::optional<std::uint64_t>(0) : std::nullopt;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto k = log[i].key_index;
    const std::uint64_t before = expected[k];
    const std::uint64_t after = log[i].sig;
    if (before == recovered[k] && after != recovered[k]) ++mismatch;
    if (before != recovered[k] && after == recovered[k]) --mismatch;
    expected[k] = after;
    if (mismatch == 0) best = i + 1;
  }
  meta["surviving_prefix"].push_back(best ? nlohmann::json(*best) : nlohmann::json(nullptr));
  meta["issued"].push_back(log.size());
  if (best && *best >= floor) return;

  // Witness: the newest surviving write and the oldest write lost before it.
  std::vector<std::int64_t> producer(recovered.size(), -1);
  for (std::size_t i = 0; i < log.size(); ++i)
    if (log[i].sig == recovered[log[i].key_index]) producer[log[i].key_index] = static_cast<std::int64_t>(i);
  std::int64_t hi = static_cast<std::int64_t>(floor) - 1;
  for (std::size_t k = 0; k < recovered.size(); ++k) hi = std::max(hi, producer[k]);
  std::vector<std::int64_t> last(recovered.size(), -1);
  for (std::int64_t i = 0; i <= hi && i < static_cast<std::int64_t>(log.size()); ++i) last[log[i].key_index] = i;
  std::int64_t lost = -1;
  for (std::size_t k = 0; k < recovered.size(); ++k) {
    const std::uint64_t want = last[k] < 0 ? kAbsent : log[last[k]].sig;
    if (want != recovered[k] && last[k] >= 0 && (lost < 0 || last[k] < lost)) lost = last[k];
  }
  const bool below_floor = best.has_value();
  const std::string kind = below_floor ? "LostCheckpointedWrite" : "PrefixGap";
  if (lost >= 0) {
    const auto& w = log[lost];
    std::string detail = "seq " + std::to_string(w.seq) + " lost";
    if (hi >= 0 && hi < static_cast<std::int64_t>(log.size()))
      detail += " while seq " + std::to_string(log[hi].seq) + " survived";
    rec.add(kind, fabric.scramble(key_base + w.key_index), writer, w.seq, detail);
  } else {
    rec.add(kind, 0, writer, 0, "no consistent prefix");
  }
}

}  // namespace gate_detail

// One of the four crash-monotonicity tests. `op` is Op::upsert or Op::rmw.
inline TestResult crash_test(const StoreFactory& factory, const GateConfig& cfg, const ValueFabric& fabric, Op op,
                             CrashMode mode) {
  using namespace gate_detail;
  const auto t0 = Clock::now();
  TestResult result;
  result.name = std::string(op == Op::rmw ? "rmw" : "upsert") + "_monotonicity_" +
                (mode == CrashMode::fuzzy_checkpoint ? "fuzzy_checkpoint" : "no_checkpoint");
  Recorder rec;

  ScratchDir dir(cfg.scratch_root.empty() ? default_scratch_root() : cfg.scratch_root, "crash");
  const std::uint32_t writers = std::max<std::uint32_t>(1, cfg.crash_writers);
  const std::uint64_t per = cfg.crash_keys_per_writer;
  StoreConfig sc;
  sc.dir = dir.path();
  sc.threads = writers;
  sc.expected_keys = writers * per;
  sc.ring_bytes = cfg.crash_ring_bytes;
  std::unique_ptr<KvStore> store;
  try {
    store = factory(sc);
  } catch (const Error& e) {
    rec.add("StoreError", 0, 0, 0, e.what());
    rec.into(result);
    return result;
  }

  std::vector<std::vector<Issued>> logs(writers);
  std::vector<std::atomic<std::uint64_t>> acked(writers);
  std::atomic<bool> stop{false};
  const bool fuzzy = mode == CrashMode::fuzzy_checkpoint;

  auto writer = [&](std::uint32_t w) {
    const auto tid = static_cast<ThreadId>(w);
    std::mt19937_64 rng(fabric.derive_seed(result.name, w));
    ValueBuffer buf;
    auto& log = logs[w];
    log.reserve(fuzzy ? 1 << 16 : cfg.crash_ops_per_writer);
    for (std::uint64_t seq = 1;; ++seq) {
      if (fuzzy ? stop.load(std::memory_order_relaxed) : seq > cfg.crash_ops_per_writer) break;
      const auto k = static_cast<std::uint32_t>(rng() % per);
      const Key key = fabric.scramble(w * per + k);
      const auto len = static_cast<std::size_t>(rng() % (cfg.crash_max_value + 1));
      std::uint64_t sig = kAbsent;
      if (op == Op::upsert && unit_double(rng) < cfg.crash_delete_fraction) {
        store->remove(tid, key);
      } else if (op == Op::upsert) {
        fabric.write_envelope(buf.prepare(len), key, tid, seq);
        store->upsert(tid, key, buf.view());
        sig = signature(buf.view());
      } else {
        auto successor = [&](std::optional<ByteView> cur, ValueBuffer& next) {
          if (cur) {
            if (const Validation v = fabric.validate(*cur, key); !v)
              rec.add("RmwInput" + std::string(verdict_name(v.verdict)), key, tid, seq);
          }
          fabric.write_envelope(next.prepare(len), key, tid, seq);
          sig = signature(next.view());
        };
        store->rmw(tid, key, successor);
      }
      log.push_back({k, sig, seq});
      acked[w].store(log.size(), std::memory_order_release);
    }
  };

  std::vector<std::uint64_t> floor(writers, 0);
  std::uint32_t crash_delay_ms = 0;
  try {
    if (!fuzzy) {
      run_threads(writers, writer);
    } else {
      std::mt19937_64 timing(fabric.derive_seed(result.name + "/timing", 0));
      crash_delay_ms = cfg.crash_min_ms +
                       static_cast<std::uint32_t>(timing() % (cfg.crash_max_ms - cfg.crash_min_ms + 1));
      std::exception_ptr ckpt_error;
      std::thread controller([&] {
        try {
          std::this_thread::sleep_for(std::chrono::milliseconds(cfg.fuzzy_lead_ms));
          for (std::uint32_t w = 0; w < writers; ++w) floor[w] = acked[w].load(std::memory_order_acquire);
          store->checkpoint();
          std::this_thread::sleep_for(std::chrono::milliseconds(crash_delay_ms));
        } catch (...) {
          ckpt_error = std::current_exception();
        }
        stop.store(true);
      });
      try {
        run_threads(writers, writer);
      } catch (...) {
        stop.store(true);
        controller.join();
        throw;
      }
      controller.join();
      if (ckpt_error) std::rethrow_exception(ckpt_error);
    }
    store->simulate_crash(mode);
    store->recover();
  } catch (const Error& e) {
    rec.add("StoreError", 0, 0, 0, e.what());
    rec.into(result);
    result.seconds = seconds_since(t0);
    return result;
  }

  // Read back every key of every writer.
  std::uint64_t reads = 0;
  ValueBuffer out;
  for (std::uint32_t w = 0; w < writers; ++w) {
    std::vector<std::uint64_t> recovered(per, kAbsent);
    for (std::uint64_t k = 0; k < per; ++k) {
      const Key key = fabric.scramble(w * per + k);
      Completion c;
      try {
        c = store->read(0, key, out);
      } catch (const Error& e) {
        rec.add("StoreError", key, static_cast<ThreadId>(w), 0, e.what());
        continue;
      }
      ++reads;
      if (c.status != Status::found) continue;
      if (const Validation v = fabric.validate(c.value, key); !v) {
        rec.add(std::string(verdict_name(v.verdict)), key, static_cast<ThreadId>(w), 0);
        continue;
      }
      recovered[k] = signature(c.value);
    }
    check_prefix(logs[w], recovered, w * per, fabric, static_cast<ThreadId>(w), fuzzy ? floor[w] : 0, rec,
                 result.metadata);
  }

  rec.into(result);
  std::uint64_t writes = 0;
  for (const auto& l : logs) writes += l.size();
  result.writes_issued = writes;
  result.reads_validated = reads;
  result.seconds = seconds_since(t0);
  result.metadata["writers"] = writers;
  result.metadata["keys_per_writer"] = per;
  if (fuzzy) {
    result.metadata["acked_at_checkpoint_start"] = floor;
    result.metadata["crash_delay_ms"] = crash_delay_ms;
  }
  return result;
}

// Readers hammer a small hot set while writers rewrite it; every Found value is validated.
inline TestResult torn_read_stress(const StoreFactory& factory, const GateConfig& cfg, const ValueFabric& fabric) {
  using namespace gate_detail;
  const auto t0 = Clock::now();
  TestResult result;
  result.name = "torn_read_stress";
  Recorder rec;

  const bool amplified = cfg.torn_profile == TornProfile::amplified;
  const std::uint32_t readers = std::max<std::uint32_t>(1, cfg.torn_readers);
  const std::uint32_t writers = std::max<std::uint32_t>(1, cfg.torn_writers);
  const std::uint64_t hot = amplified ? 64 : 1024;
  const std::uint32_t pool_depth = amplified ? 2 : 4;

  ScratchDir dir(cfg.scratch_root.empty() ? default_scratch_root() : cfg.scratch_root, "torn");
  StoreConfig sc;
  sc.dir = dir.path();
  sc.threads = readers + writers;
  sc.expected_keys = hot;
  std::unique_ptr<KvStore> store;
  try {
    store = factory(sc);
  } catch (const Error& e) {
    rec.add("StoreError", 0, 0, 0, e.what());
    rec.into(result);
    return result;
  }

  std::vector<Key> keys(hot);
  for (std::uint64_t i = 0; i < hot; ++i) keys[i] = fabric.scramble(i);

  // pools[w][k * depth + j]: envelopes writer w cycles through for key k
  std::vector<std::vector<Bytes>> pools(writers);
  for (std::uint32_t w = 0; w < writers; ++w) {
    std::mt19937_64 rng(fabric.derive_seed("torn-pool", w));
    auto& pool = pools[w];
    pool.reserve(hot * pool_depth);
    for (std::uint64_t k = 0; k < hot; ++k)
      for (std::uint32_t j = 0; j < pool_depth; ++j) {
        const std::size_t len = amplified ? 4096 : rng() % 257;
        pool.push_back(fabric.make_envelope_for_key(keys[k], static_cast<ThreadId>(w), k * pool_depth + j, len));
      }
  }
  try {
    for (std::uint64_t k = 0; k < hot; ++k) {
      const auto w = static_cast<std::uint32_t>(k % writers);
      store->upsert(static_cast<ThreadId>(w), keys[k], pools[w][k * pool_depth]);
    }
  } catch (const Error& e) {
    rec.add("StoreError", 0, 0, 0, e.what());
    rec.into(result);
    return result;
  }

  std::atomic<std::uint64_t> total_reads{0};
  std::atomic<std::uint64_t> total_writes{0};
  std::atomic<bool> done{false};
  auto finished = [&] {
    return total_reads.load(std::memory_order_relaxed) >= cfg.torn_min_reads ||
           (cfg.stop_on_violation && rec.any());
  };

  run_threads(readers + writers, [&](std::uint32_t i) {
    const auto tid = static_cast<ThreadId>(i);
    if (i < readers) {
      std::mt19937_64 rng(fabric.derive_seed("torn-reader", i));
      ValueBuffer out;
      std::uint64_t local = 0;
      while (!done.load(std::memory_order_relaxed)) {
        const Key key = keys[rng() % hot];
        try {
          const Completion c = store->read(tid, key, out);
          if (c.status != Status::found) {
            rec.add("NotFound", key, tid, 0);
          } else if (const Validation v = fabric.validate(c.value, key); !v) {
            const EnvelopeHeader h = ValueFabric::decode_header(c.value);
            rec.add(std::string(verdict_name(v.verdict)), key, h.thread_id, h.seq);
          }
        } catch (const Error& e) {
          rec.add("StoreError", key, tid, 0, e.what());
        }
        if (++local == 1024) {
          total_reads.fetch_add(local, std::memory_order_relaxed);
          local = 0;
          if (finished()) done.store(true);
        }
      }
      total_reads.fetch_add(local, std::memory_order_relaxed);
    } else {
      const std::uint32_t w = i - readers;
      std::mt19937_64 rng(fabric.derive_seed("torn-writer", w));
      const auto& pool = pools[w];
      std::vector<std::uint32_t> cursor(hot, 0);
      std::uint64_t local = 0;
      const std::uint64_t own = (hot + writers - 1 - w) / writers;  // keys k with k % writers == w
      while (!done.load(std::memory_order_relaxed)) {
        std::uint64_t k;
        if (amplified && own > 0 && (rng() & 1)) {
          k = w + writers * (rng() % own);
        } else {
          k = rng() % hot;
        }
        const std::uint32_t j = cursor[k] = (cursor[k] + 1) % pool_depth;
        const Bytes& env = pool[k * pool_depth + j];
        try {
          if (!amplified && rng() % 10 == 0) {
            store->rmw(tid, keys[k], [&](std::optional<ByteView>, ValueBuffer& next) { next.assign(env); });
          } else {
            store->upsert(tid, keys[k], env);
          }
        } catch (const Error& e) {
          rec.add("StoreError", keys[k], tid, 0, e.what());
        }
        if (++local % 256 == 0 && finished()) done.store(true);
      }
      total_writes.fetch_add(local);
    }
  });

  rec.into(result);
  result.reads_validated = total_reads.load();
  result.writes_issued = total_writes.load();
  result.seconds = seconds_since(t0);
  result.metadata = {{"profile", amplified ? "amplified" : "standard"},
                     {"readers", readers},
                     {"writers", writers},
                     {"hot_keys", hot},
                     {"value_sizes", amplified ? "4096B" : "0..256B"},
                     {"min_reads", cfg.torn_min_reads}};
  return result;
}

inline nlohmann::json gate_parameters(const GateConfig& cfg) {
  return {{"chosen_by", "workbench defaults; not fixed by any external source"},
          {"retention_keys", cfg.retention_keys},
          {"delete_fraction", cfg.delete_fraction},
          {"crash_writers", cfg.crash_writers},
          {"crash_keys_per_writer", cfg.crash_keys_per_writer},
          {"crash_ops_per_writer", cfg.crash_ops_per_writer},
          {"crash_window_ms", {cfg.crash_min_ms, cfg.crash_max_ms}},
          {"torn_readers", cfg.torn_readers},
          {"torn_writers", cfg.torn_writers},
          {"torn_min_reads", cfg.torn_min_reads},
          {"torn_profile", cfg.torn_profile == TornProfile::amplified ? "amplified" : "standard"},
          {"stop_on_violation", cfg.stop_on_violation}};
}

inline GateReport run_gate(const StoreFactory& factory, const std::string& store_name, const GateConfig& cfg,
                           const ValueFabric& fabric) {
  GateReport report;
  report.store = store_name;
  report.parameters = gate_parameters(cfg);
  for (auto& r : retention_check(factory, cfg, fabric)) report.tests.push_back(std::move(r));
  for (Op op : {Op::upsert, Op::rmw})
    for (CrashMode m : {CrashMode::fuzzy_checkpoint, CrashMode::no_checkpoint})
      report.tests.push_back(crash_test(factory, cfg, fabric, op, m));
  report.tests.push_back(torn_read_stress(factory, cfg, fabric));
  return report;
}

}  // namespace kvbench
