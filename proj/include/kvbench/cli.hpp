#pragma once

// The `kvbench` command line. Kept in a header so tests can drive it in-process.
//
//   validate <spec>                     parse, echo the normalized card
//   gate --spec P --store S             run the correctness gate
//   bench --spec P --store S --unsafe-skip-gate
//                                       timed run without a gate (UNGATED)
//   full --spec P --store S             gate, then bench only on GATE-PASS
//   gallery-matrix [--spec P]           every gallery variant plus the honest
//                                       stores through the gate
//   report <dir>                        merge runs.jsonl into summary.json
//
// Exit codes: 0 ok, 1 invalid input or runtime error, 2 GATE-FAIL (bench
// refused, or a gallery expectation not met), 3 BudgetExceeded, 4 EnvDirty,
// 64 usage.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "kvbench/bench.hpp"
#include "kvbench/gate.hpp"
#include "kvbench/hack_gallery.hpp"
#include "kvbench/report.hpp"
#include "kvbench/spec_cards.hpp"
#include "kvbench/stores.hpp"

namespace kvbench::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitGateFail = 2;
inline constexpr int kExitBudget = 3;
inline constexpr int kExitEnvDirty = 4;
inline constexpr int kExitUsage = 64;

inline constexpr const char* kOutEnv = "KVBENCH_OUT";
inline constexpr double kDefaultMatrixScale = 0.004;

struct Options {
  std::string spec;
  std::string store = "reference";
  double desk_scale = 1.0;
  bool repro = false;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scratch;
  std::uint32_t threads = 0;

  std::optional<std::uint64_t> retention_keys;
  std::optional<std::uint64_t> torn_reads;
  std::optional<std::uint64_t> crash_ops;
  std::string torn_profile;
  bool inject_gate_fault = false;

  std::uint32_t paired_runs = 6;
  double warmup = 5.0;
  double duration = 0;
  bool unsafe_skip_gate = false;
  std::string compare;
  std::string env_snapshot_dir;
  std::optional<std::uint32_t> max_value_bytes;
  bool no_pin = false;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

inline fs::path output_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') return env;
  return "kvbench-out";
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline SpecCard load_card(const Options& o) {
  if (o.spec.empty()) throw UsageError("--spec is required");
  SpecCard card = parse_spec(read_file(o.spec));
  if (o.desk_scale != 1.0) card = desk_scale(card, o.desk_scale);
  if (o.threads != 0) card.environment.cpu_threads = o.threads;
  return card;
}

// A fixed secret reopens the value-regeneration and key-density shortcuts, so
// it needs --repro and marks everything it produces.
inline RunSecret resolve_secret(const Options& o, std::vector<std::string>& watermarks) {
  if (o.seed && !o.repro) throw UsageError("--seed is only honored together with --repro");
  if (!o.repro) return RunSecret::fresh();
  watermarks.push_back("REPRO");
  return RunSecret::from_seed(o.seed.value_or(0));
}

inline GateConfig gate_config(const Options& o, const SpecCard& card) {
  GateConfig g = GateConfig::from_card(card);
  if (o.retention_keys) g.retention_keys = *o.retention_keys;
  if (o.torn_reads) g.torn_min_reads = *o.torn_reads;
  if (o.crash_ops) g.crash_ops_per_writer = *o.crash_ops;
  if (o.torn_profile == "amplified") g.torn_profile = TornProfile::amplified;
  else if (o.torn_profile == "standard" || o.torn_profile.empty()) g.torn_profile = TornProfile::standard;
  else throw UsageError("--torn-profile must be standard or amplified");
  if (!o.scratch.empty()) g.scratch_root = o.scratch;
  return g;
}

inline StoreFactory factory_for(const Options& o) {
  if (!is_known_store(o.store)) throw UsageError("unknown store '" + o.store + "'");
  const std::string sel = o.store;
  const bool inject = o.inject_gate_fault;
  return [sel, inject](const StoreConfig& sc) -> std::unique_ptr<KvStore> {
    auto s = make_store(sel, sc);
    if (inject) return std::make_unique<FaultInjectingStore>(std::move(s));
    return s;
  };
}

inline void print_gate(std::ostream& out, const GateReport& r) {
  out << (r.pass() ? "GATE-PASS" : "GATE-FAIL") << "  " << r.store << "\n";
  for (const auto& t : r.tests) {
    char line[256];
    std::snprintf(line, sizeof line, "  %-40s %-4s reads=%-10llu writes=%-10llu %7.2fs", t.name.c_str(),
                  t.pass ? "ok" : "FAIL", static_cast<unsigned long long>(t.reads_validated),
                  static_cast<unsigned long long>(t.writes_issued), t.seconds);
    out << line;
    for (const auto& [kind, n] : t.violations) out << "  " << kind << "=" << n;
    out << "\n";
  }
}

inline BenchOptions bench_options(const Options& o, std::vector<std::string> watermarks) {
  BenchOptions b;
  b.paired_runs = o.paired_runs;
  b.warmup_sec = o.warmup;
  b.duration_sec = o.duration;
  b.threads = o.threads;
  b.pin_threads = !o.no_pin;
  b.max_value_bytes = o.max_value_bytes;
  if (!o.scratch.empty()) b.scratch_root = o.scratch;
  if (!o.env_snapshot_dir.empty()) b.snapshot_dir = o.env_snapshot_dir;
  b.watermarks = std::move(watermarks);
  return b;
}

inline void print_bench(std::ostream& out, const IndicatorReport& r) {
  char line[256];
  std::snprintf(line, sizeof line, "%s  %s  budget=%lluMiB  threads=%u\n", r.store.c_str(), r.workload.c_str(),
                static_cast<unsigned long long>(r.memory_budget_bytes >> 20), r.threads);
  out << line;
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const auto& run = r.runs[i];
    std::snprintf(line, sizeof line, "  run %zu  %.4f Mops/s  p50 %.2fus  p99 %.2fus  peak %lluB\n", i,
                  run.throughput_mops, run.latency_p50_us, run.latency_p99_us,
                  static_cast<unsigned long long>(run.budget_peak_bytes));
    out << line;
  }
  std::snprintf(line, sizeof line, "  mean %.4f Mops/s  stddev %.4f  cv %.3f%s\n", r.paired_run_stats.mean,
                r.paired_run_stats.stddev, r.paired_run_stats.cv, r.paired_run_stats.noisy ? "  NOISY" : "");
  out << line;
  for (const auto& w : r.watermarks) out << "  [" << w << "]\n";
}

inline int cmd_validate(const Options& o, std::ostream& out) {
  const SpecCard card = load_card(o);
  out << serialize(card) << "\n";
  nlohmann::json rec = {{"kind", "validate"}, {"spec", o.spec}, {"card", to_json(card)}};
  if (!o.out.empty() || std::getenv(kOutEnv) != nullptr) append_report(output_dir(o), rec);
  return kExitOk;
}

inline int cmd_gate(const Options& o, std::ostream& out, std::optional<GateReport>* keep = nullptr) {
  const StoreFactory factory = factory_for(o);
  const SpecCard card = load_card(o);
  std::vector<std::string> marks;
  const RunSecret secret = resolve_secret(o, marks);
  const GateReport r = run_gate(factory, o.store, gate_config(o, card), ValueFabric(secret));
  print_gate(out, r);
  nlohmann::json rec = to_json(r);
  rec["kind"] = "gate";
  rec["workload"] = workload_label(card.workload);
  rec["watermarks"] = marks;
  append_report(output_dir(o), rec);
  if (keep != nullptr) *keep = r;
  return r.pass() ? kExitOk : kExitGateFail;
}

inline int run_bench_step(const Options& o, const SpecCard& card, const RunSecret& secret,
                          const std::vector<std::string>& marks, const BenchAuthorization& auth, std::ostream& out) {
  const BenchOptions bo = bench_options(o, marks);
  if (!o.compare.empty()) {
    if (!is_known_store(o.compare)) throw UsageError("unknown store '" + o.compare + "'");
    if (!auth.ungated()) throw GateRequired("comparison needs --unsafe-skip-gate or `full` on each store");
    const ComparisonReport c = run_comparison(o.store, o.compare, card, secret, bo, auth, auth);
    print_bench(out, c.a);
    print_bench(out, c.b);
    out << "  ratio " << o.store << "/" << o.compare << " mean " << c.ratio_stats.mean << " cv " << c.ratio_stats.cv
        << "\n";
    append_report(output_dir(o), to_json(c));
    return kExitOk;
  }
  const IndicatorReport r = run_bench(factory_for(o), o.store, card, secret, bo, auth);
  print_bench(out, r);
  append_report(output_dir(o), to_json(r));
  return kExitOk;
}

inline int cmd_bench(const Options& o, std::ostream& out) {
  if (!o.unsafe_skip_gate)
    throw GateRequired("no GATE-PASS for " + o.store + " in this session; run `full` or pass --unsafe-skip-gate");
  factory_for(o);
  const SpecCard card = load_card(o);
  std::vector<std::string> marks;
  const RunSecret secret = resolve_secret(o, marks);
  return run_bench_step(o, card, secret, marks, BenchAuthorization::unsafe_skip_gate(), out);
}

inline int cmd_full(const Options& o, std::ostream& out, std::ostream& err) {
  const StoreFactory factory = factory_for(o);
  const SpecCard card = load_card(o);
  std::vector<std::string> marks;
  const RunSecret secret = resolve_secret(o, marks);
  const GateReport g = run_gate(factory, o.store, gate_config(o, card), ValueFabric(secret));
  print_gate(out, g);
  nlohmann::json rec = to_json(g);
  rec["kind"] = "gate";
  rec["workload"] = workload_label(card.workload);
  rec["watermarks"] = marks;
  append_report(output_dir(o), rec);
  if (!g.pass()) {
    err << "bench refused: " << o.store << " did not pass the gate\n";
    return kExitGateFail;
  }
  if (!o.compare.empty()) throw UsageError("--compare is only available on `bench`");
  return run_bench_step(o, card, secret, marks, BenchAuthorization::from_gate(g, card), out);
}

struct MatrixRow {
  std::string store;
  bool honest = false;
  GateReport report;
  std::string expected;
  bool expectation_met = false;
};

inline bool expectation_met(const GateReport& r, const GalleryExpectation& e) {
  const TestResult* t = r.find(e.test);
  if (t == nullptr || t->pass) return false;
  return e.kind.empty() || t->violations.contains(std::string(e.kind));
}

inline int cmd_matrix(const Options& o, std::ostream& out) {
  SpecCard card;
  if (o.spec.empty()) {
    card = desk_scale(parse_spec(R"card({api: ["Read","Upsert","RMW","Delete"], read_semantics: "last Upsert; empty after Delete",
      monotonicity: "per-thread: r2 never without r1", concurrency: "multi-threaded safe; no torn reads" }
      { memory_budget_gb: 8 }
      { key_type: "uint64_t", value_size_bytes: 100, num_keys: 250000000, distribution: "zipfian(theta=0.99)",
        mix: { "Read": 0.5, "Upsert": 0.5 }, duration_sec: 30 })card"),
                      kDefaultMatrixScale);
    if (o.threads != 0) card.environment.cpu_threads = o.threads;
  } else {
    card = load_card(o);
  }
  std::vector<std::string> marks;
  const RunSecret secret = resolve_secret(o, marks);
  const ValueFabric fabric(secret);
  Options go = o;
  if (go.torn_profile.empty()) go.torn_profile = "amplified";
  GateConfig gc = gate_config(go, card);

  std::vector<MatrixRow> rows;
  for (const auto& e : kGalleryExpectations) {
    MatrixRow row;
    row.store = "gallery:" + std::string(e.id);
    GateConfig stop = gc;
    stop.stop_on_violation = true;
    row.report = run_gate([&](const StoreConfig& sc) { return make_store(row.store, sc); }, row.store, stop, fabric);
    row.expected = std::string(e.test) + (e.kind.empty() ? "" : ":" + std::string(e.kind));
    row.expectation_met = expectation_met(row.report, e);
    rows.push_back(std::move(row));
  }
  for (const char* honest : {"baseline", "reference"}) {
    MatrixRow row;
    row.store = honest;
    row.honest = true;
    row.report = run_gate([&](const StoreConfig& sc) { return make_store(row.store, sc); }, row.store, gc, fabric);
    row.expected = "GATE-PASS";
    row.expectation_met = row.report.pass();
    rows.push_back(std::move(row));
  }

  bool all = true;
  nlohmann::json table = nlohmann::json::array();
  char line[512];
  std::snprintf(line, sizeof line, "%-32s %-9s %-36s %-4s %s\n", "store", "verdict", "expected", "met", "failing tests");
  out << line;
  for (const auto& r : rows) {
    std::string failing;
    for (const auto& t : r.report.tests) {
      if (t.pass) continue;
      failing += (failing.empty() ? "" : " ") + t.name + "[";
      bool first = true;
      for (const auto& [k, n] : t.violations) {
        failing += (first ? "" : ",") + k + "=" + std::to_string(n);
        first = false;
      }
      failing += "]";
    }
    std::snprintf(line, sizeof line, "%-32s %-9s %-36s %-4s ", r.store.c_str(),
                  r.report.pass() ? "GATE-PASS" : "GATE-FAIL", r.expected.c_str(), r.expectation_met ? "yes" : "NO");
    out << line << failing << "\n";
    all = all && r.expectation_met;
    table.push_back({{"store", r.store},
                     {"honest", r.honest},
                     {"expected", r.expected},
                     {"expectation_met", r.expectation_met},
                     {"gate", to_json(r.report)}});
  }
  append_report(output_dir(o), {{"kind", "gallery-matrix"},
                                {"workload", workload_label(card.workload)},
                                {"watermarks", marks},
                                {"rows", table},
                                {"all_expectations_met", all}});
  return all ? kExitOk : kExitGateFail;
}

inline int cmd_report(const std::string& dir, std::ostream& out) {
  const auto rows = summarize_dir(dir);
  out << format_summary(rows);
  return kExitOk;
}

inline void add_common(CLI::App* sub, Options& o, bool spec_required) {
  auto* spec = sub->add_option("--spec", o.spec, "spec card file");
  if (spec_required) spec->required();
  sub->add_option("--desk-scale", o.desk_scale, "scale num_keys, duration and budget by this factor");
  sub->add_flag("--repro", o.repro, "honor --seed; reports are watermarked REPRO");
  sub->add_option("--seed", o.seed, "fixed run secret seed (needs --repro)");
  sub->add_option("--out", o.out, "output directory (default $KVBENCH_OUT, else ./kvbench-out)");
  sub->add_option("--scratch", o.scratch, "scratch directory for store files");
  sub->add_option("--threads", o.threads, "override cpu_threads");
}

inline void add_gate_opts(CLI::App* sub, Options& o) {
  sub->add_option("--retention-keys", o.retention_keys, "keys loaded by the retention test");
  sub->add_option("--torn-reads", o.torn_reads, "minimum validated reads in torn-read stress");
  sub->add_option("--crash-ops", o.crash_ops, "writes per writer in no-checkpoint crash tests");
  sub->add_option("--torn-profile", o.torn_profile, "standard | amplified");
  sub->add_flag("--inject-gate-fault", o.inject_gate_fault, "corrupt every value read (gate must fail)");
}

inline void add_bench_opts(CLI::App* sub, Options& o) {
  sub->add_option("--paired-runs", o.paired_runs, "independent runs per store")->check(CLI::Range(1u, 1000u));
  sub->add_option("--warmup", o.warmup, "warmup seconds, excluded from results");
  sub->add_option("--duration", o.duration, "timed seconds per run (default: the card's)");
  sub->add_option("--env-snapshot-dir", o.env_snapshot_dir, "tree to snapshot before and after (e.g. /proc/sys/vm)");
  sub->add_option("--max-value-bytes", o.max_value_bytes, "driver value clip");
  sub->add_flag("--no-pin", o.no_pin, "do not pin driver threads");
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"kvbench: spec cards, correctness gate, and throughput bench for key-value stores"};
  app.require_subcommand(1);
  Options o;
  std::string validate_path;
  std::string report_dir;

  auto* validate = app.add_subcommand("validate", "parse a spec card and echo it normalized");
  validate->add_option("spec", validate_path, "spec card file")->required();
  validate->add_option("--desk-scale", o.desk_scale, "scale factor");
  validate->add_option("--out", o.out, "also append a record here");

  auto* gate = app.add_subcommand("gate", "run the correctness gate");
  add_common(gate, o, true);
  gate->add_option("--store", o.store, "baseline | reference | gallery:<id>")->required();
  add_gate_opts(gate, o);

  auto* bench = app.add_subcommand("bench", "timed run without a gate (needs --unsafe-skip-gate)");
  add_common(bench, o, true);
  bench->add_option("--store", o.store, "store selector")->required();
  bench->add_flag("--unsafe-skip-gate", o.unsafe_skip_gate, "bench without a gate; report watermarked UNGATED");
  bench->add_option("--compare", o.compare, "second store for paired comparison (paired runs >= 2)");
  add_bench_opts(bench, o);

  auto* full = app.add_subcommand("full", "gate, then bench on GATE-PASS");
  add_common(full, o, true);
  full->add_option("--store", o.store, "store selector")->required();
  add_gate_opts(full, o);
  add_bench_opts(full, o);

  auto* matrix = app.add_subcommand("gallery-matrix", "every gallery variant and both honest stores through the gate");
  add_common(matrix, o, false);
  add_gate_opts(matrix, o);

  auto* report = app.add_subcommand("report", "merge runs.jsonl files into summary.json");
  report->add_option("dir", report_dir, "report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*validate) {
      o.spec = validate_path;
      return cmd_validate(o, out);
    }
    if (*gate) return cmd_gate(o, out);
    if (*bench) return cmd_bench(o, out);
    if (*full) return cmd_full(o, out, err);
    if (*matrix) return cmd_matrix(o, out);
    if (*report) return cmd_report(report_dir, out);
  } catch (const UsageError& e) {
    err << "usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const GateRequired& e) {
    err << "bench refused: " << e.what() << "\n";
    return kExitGateFail;
  } catch (const BudgetExceeded& e) {
    err << e.what() << "\n";
    return kExitBudget;
  } catch (const EnvDirty& e) {
    err << e.what() << "\n";
    return kExitEnvDirty;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace kvbench::cli
