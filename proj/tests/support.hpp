#pragma once

// Oracles and helpers shared by the unit tests and the acceptance binary.
// Nothing here calls into the code it is used to check, apart from the
// envelope constructor where a test needs real values.

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "kvbench/cli.hpp"
#include "kvbench/kvbench.hpp"

namespace kvbench::testing {

inline fs::path scratch_root() { return fs::temp_directory_path() / "kvbench-tests"; }

// P(rank i) = i^-theta / sum_j j^-theta, summed term by term.
inline std::vector<double> zipf_pmf(std::uint64_t n, double theta) {
  std::vector<double> p(n);
  double h = 0;
  for (std::uint64_t j = 1; j <= n; ++j) h += std::pow(static_cast<double>(j), -theta);
  for (std::uint64_t i = 1; i <= n; ++i) p[i - 1] = std::pow(static_cast<double>(i), -theta) / h;
  return p;
}

struct ChiSquare {
  double statistic = 0;
  double critical = 0;
  std::size_t dof = 0;
  bool pass() const { return statistic <= critical; }
};

inline ChiSquare chi_square(const std::vector<std::uint64_t>& observed, const std::vector<double>& pmf, double alpha) {
  std::uint64_t total = 0;
  for (auto o : observed) total += o;
  ChiSquare c;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    const double e = pmf[i] * static_cast<double>(total);
    c.statistic += (static_cast<double>(observed[i]) - e) * (static_cast<double>(observed[i]) - e) / e;
  }
  c.dof = pmf.size() - 1;
  c.critical = boost::math::quantile(boost::math::chi_squared(static_cast<double>(c.dof)), 1.0 - alpha);
  return c;
}

inline ChiSquare zipf_goodness_of_fit(std::uint64_t n, double theta, std::uint64_t draws, std::uint64_t seed,
                                      double alpha = 0.001) {
  ZipfSampler z(n, theta);
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> counts(n);
  for (std::uint64_t i = 0; i < draws; ++i) ++counts[z.sample(rng) - 1];
  return chi_square(counts, zipf_pmf(n, theta), alpha);
}

// ---- randomized scripts ----------------------------------------------------

struct ScriptOp {
  Op op = Op::read;
  Key key = 0;
  std::uint32_t len = 0;
  std::uint64_t seq = 0;
};

// Per-thread scripts where thread t only touches keys k with k % threads == t.
struct Script {
  std::uint32_t threads = 4;
  std::uint64_t keys = 0;
  std::vector<std::vector<ScriptOp>> per_thread;
};

inline std::uint32_t script_len(std::mt19937_64& rng) {
  switch (rng() % 4) {
    case 0: return static_cast<std::uint32_t>(rng() % 8);         // inline
    case 1: return 8 + static_cast<std::uint32_t>(rng() % 20);    // short envelope
    case 2: return 28 + static_cast<std::uint32_t>(rng() % 200);  // full envelope
    default: return 100;                                          // repeated size
  }
}

inline Script make_script(std::uint64_t seed, std::uint32_t threads, std::uint64_t ops, std::uint64_t keys) {
  std::mt19937_64 rng(seed);
  Script s;
  s.threads = threads;
  s.keys = keys;
  s.per_thread.resize(threads);
  for (std::uint64_t i = 0; i < ops; ++i) {
    const auto t = static_cast<std::uint32_t>(i % threads);
    const std::uint64_t slot = rng() % (keys / threads);
    ScriptOp op;
    op.key = slot * threads + t;
    const auto r = rng() % 100;
    op.op = r < 45 ? Op::upsert : r < 65 ? Op::rmw : r < 75 ? Op::remove : Op::read;
    if (op.op == Op::upsert) op.len = script_len(rng);
    op.seq = s.per_thread[t].size();
    s.per_thread[t].push_back(op);
  }
  return s;
}

// Successor used by rmw in scripts: a fresh envelope whose length depends on
// the current value, so the result is a function of what the store returned.
inline std::uint32_t rmw_len(std::optional<ByteView> cur) {
  if (!cur) return 40;
  return static_cast<std::uint32_t>((cur->size() * 7 + 3) % 250);
}

// Replays a script against an ordered map, one thread after another. Keys are
// disjoint per thread, so any interleaving gives the same final state.
inline std::map<Key, Bytes> replay_oracle(const Script& s, const ValueFabric& fabric) {
  std::map<Key, Bytes> state;
  for (std::uint32_t t = 0; t < s.threads; ++t) {
    for (const auto& op : s.per_thread[t]) {
      const Key k = fabric.scramble(op.key);
      switch (op.op) {
        case Op::upsert:
          state[k] = fabric.make_envelope_for_key(k, static_cast<ThreadId>(t), op.seq, op.len);
          break;
        case Op::rmw: {
          auto it = state.find(k);
          std::optional<ByteView> cur;
          if (it != state.end()) cur = ByteView(it->second);
          state[k] = fabric.make_envelope_for_key(k, static_cast<ThreadId>(t), op.seq, rmw_len(cur));
          break;
        }
        case Op::remove: state.erase(k); break;
        case Op::read: break;
      }
    }
  }
  return state;
}

// Runs a script with one OS thread per script thread. Returns the number of
// reads whose value disagreed with what that thread last wrote.
inline std::uint64_t run_script(KvStore& store, const Script& s, const ValueFabric& fabric) {
  std::atomic<std::uint64_t> bad{0};
  std::vector<std::thread> threads;
  for (std::uint32_t t = 0; t < s.threads; ++t) {
    threads.emplace_back([&, t] {
      const auto tid = static_cast<ThreadId>(t);
      ValueBuffer buf;
      std::map<Key, Bytes> mine;
      for (const auto& op : s.per_thread[t]) {
        const Key k = fabric.scramble(op.key);
        switch (op.op) {
          case Op::upsert: {
            Bytes v = fabric.make_envelope_for_key(k, tid, op.seq, op.len);
            store.upsert(tid, k, v);
            mine[k] = std::move(v);
            break;
          }
          case Op::rmw: {
            auto f = [&](std::optional<ByteView> cur, ValueBuffer& next) {
              fabric.write_envelope(next.prepare(rmw_len(cur)), k, tid, op.seq);
            };
            store.rmw(tid, k, f);
            auto it = mine.find(k);
            std::optional<ByteView> cur;
            if (it != mine.end()) cur = ByteView(it->second);
            mine[k] = fabric.make_envelope_for_key(k, tid, op.seq, rmw_len(cur));
            break;
          }
          case Op::remove:
            store.remove(tid, k);
            mine.erase(k);
            break;
          case Op::read: {
            const Completion c = store.read(tid, k, buf);
            auto it = mine.find(k);
            const bool want = it != mine.end();
            if ((c.status == Status::found) != want) ++bad;
            else if (want && !equal_bytes(c.value, it->second)) ++bad;
            break;
          }
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  return bad.load();
}

// Final state of every key in [0, keys) as seen through read().
inline std::map<Key, Bytes> dump_state(KvStore& store, std::uint64_t keys, const ValueFabric& fabric) {
  std::map<Key, Bytes> out;
  ValueBuffer buf;
  for (std::uint64_t i = 0; i < keys; ++i) {
    const Key k = fabric.scramble(i);
    const Completion c = store.read(0, k, buf);
    if (c.status == Status::found) out[k] = Bytes(c.value.begin(), c.value.end());
  }
  return out;
}

inline StoreConfig store_config(const fs::path& dir, std::uint32_t threads, std::uint64_t keys,
                                std::uint64_t ring_bytes = 0) {
  StoreConfig sc;
  sc.dir = dir;
  sc.threads = threads;
  sc.expected_keys = keys;
  sc.ring_bytes = ring_bytes;
  return sc;
}

// A gate small enough for unit tests.
inline GateConfig small_gate() {
  GateConfig g;
  g.retention_keys = 20'000;
  g.crash_keys_per_writer = 512;
  g.crash_ops_per_writer = 3'000;
  g.torn_min_reads = 200'000;
  g.scratch_root = scratch_root();
  return g;
}

inline SpecCard card_from(const std::string& text) { return parse_spec(text); }

inline const char* kFullScaleCard = R"card(// Requirement card
{ api:              ["Read", "Upsert", "RMW", "Delete"],
  read_semantics:   "last Upsert; empty after Delete",
  monotonicity:     "per-thread: r2 never without r1",
  concurrency:   "multi-threaded safe; no torn reads" }

// Environment card
{ cpu:              "64 vCPU",
  memory:           "256 GB DDR4",
  storage:          "NVMe SSD RAID",
  memory_budget_gb: 8 }

// Workload card
{ key_type:         "uint64_t",
  value_size_bytes: 100,
  num_keys:         250000000,
  distribution:     "zipfian(theta=0.99)",
  mix:              { "Read": 0.5, "Upsert": 0.5 },
  duration_sec:     30 }
)card";

// Requirement and environment cards around a caller-supplied workload card.
inline std::string card_text(const std::string& workload, std::uint64_t budget_bytes = 256ULL << 20,
                             const std::string& api = R"(["Read", "Upsert", "RMW", "Delete"])") {
  return "{ api: " + api +
         ", read_semantics: \"last Upsert; empty after Delete\", monotonicity: \"per-thread: r2 never without r1\","
         " concurrency: \"multi-threaded safe; no torn reads\" }\n{ memory_budget_bytes: " +
         std::to_string(budget_bytes) + " }\n" + workload;
}

struct MetaTransition {
  const char* name;
  std::function<void(ReferenceStore&, const ValueFabric&, Key)> setup;
  std::function<void(ReferenceStore&, const ValueFabric&, Key)> step;
};

inline void put_envelope(ReferenceStore& s, const ValueFabric& f, Key k, std::size_t len, std::uint64_t seq,
                         ThreadId t = 0) {
  s.upsert(t, k, f.make_envelope_for_key(k, t, seq, len));
}

// Every legal meta-word transition, driven through the public operations.
inline const std::vector<MetaTransition>& legal_meta_transitions() {
  auto nothing = [](ReferenceStore&, const ValueFabric&, Key) {};
  static const std::vector<MetaTransition> transitions{
      {"empty->inline", nothing, [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 5, 1); }},
      {"empty->logptr", nothing, [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); }},
      {"inline->inline(len)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 5, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 6, 2); }},
      // short envelopes carry no seq, so use raw bytes for a same-length change
      {"inline->inline(bytes)", [](auto& s, auto&, Key k) { s.upsert(0, k, as_bytes("abcde")); },
       [](auto& s, auto&, Key k) { s.upsert(0, k, as_bytes("abcdf")); }},
      {"inline->logptr", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 5, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 2); }},
      {"inline->tombstone", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 5, 1); },
       [](auto& s, auto&, Key k) { s.remove(0, k); }},
      {"logptr->tombstone", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto&, Key k) { s.remove(0, k); }},
      {"logptr->logptr(equal size)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 2); }},
      {"logptr->logptr(shrink)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 60, 2); }},
      {"logptr->logptr(grow)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 200, 2); }},
      {"logptr->logptr(other thread)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 60, 2, 1); }},
      {"logptr->inline", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 4, 2); }},
      {"tombstone->inline",
       [](auto& s, auto& f, Key k) {
         put_envelope(s, f, k, 5, 1);
         s.remove(0, k);
       },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 5, 2); }},
      {"tombstone->logptr",
       [](auto& s, auto& f, Key k) {
         put_envelope(s, f, k, 100, 1);
         s.remove(0, k);
       },
       [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 2); }},
      {"rmw logptr->logptr(same size)", [](auto& s, auto& f, Key k) { put_envelope(s, f, k, 100, 1); },
       [](auto& s, auto& f, Key k) {
         auto m = [&](std::optional<ByteView> cur, ValueBuffer& next) {
           f.write_envelope(next.prepare(cur ? cur->size() : 1), k, 0, 9);
         };
         s.rmw(0, k, m);
       }},
  };
  return transitions;
}

struct TransitionOutcome {
  std::string name;
  std::uint64_t before = 0;
  std::uint64_t after = 0;
};

inline std::vector<TransitionOutcome> run_meta_transitions(const fs::path& dir, const ValueFabric& f, int reps,
                                                           std::uint64_t seed) {
  std::vector<TransitionOutcome> out;
  std::mt19937_64 rng(seed);
  for (int rep = 0; rep < reps; ++rep) {
    for (const auto& t : legal_meta_transitions()) {
      ReferenceStore s(store_config(dir / std::to_string(rep), 2, 64));
      const Key k = rng() | 1;
      t.setup(s, f, k);
      const std::uint64_t before = s.meta_of(k).value_or(meta::kEmpty);
      t.step(s, f, k);
      out.push_back({t.name, before, s.meta_of(k).value_or(meta::kEmpty)});
    }
  }
  return out;
}

}  // namespace kvbench::testing
