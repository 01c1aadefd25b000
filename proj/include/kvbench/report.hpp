#pragma once

// Append-only JSON-lines reports and the merged summary.
//
// Every record is one line of `runs.jsonl` in the output directory. Record
// kinds: "validate", "gate", "bench", "comparison", "gallery-matrix". The
// summary merges every bench record (including both sides of comparisons)
// into rows keyed by (store, workload, budget).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "kvbench/common/errors.hpp"
#include "kvbench/common/files.hpp"

namespace kvbench {

inline constexpr const char* kRunsFile = "runs.jsonl";
inline constexpr const char* kSummaryFile = "summary.json";

inline fs::path append_report(const fs::path& dir, nlohmann::json record) {
  fs::create_directories(dir);
  const fs::path path = dir / kRunsFile;
  std::ofstream out(path, std::ios::app);
  if (!out) throw ConfigError("cannot append to " + path.string());
  out << record.dump() << '\n';
  if (!out.flush()) throw ConfigError("write failed on " + path.string());
  return path;
}

inline std::vector<nlohmann::json> read_reports(const fs::path& dir) {
  std::vector<nlohmann::json> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(f.string() + ":" + std::to_string(n) + ": " + e.what());
      }
    }
  }
  return out;
}

struct SummaryRow {
  std::string store;
  std::string workload;
  std::uint64_t budget = 0;
  std::vector<double> throughputs;
  double p99_us = 0;
  std::uint64_t budget_peak = 0;
  std::vector<std::string> watermarks;
  std::string gate = "-";
};

// Rows keyed like a results grid: store x workload x budget, with every run's
// throughput pooled per row.
inline nlohmann::json merge_reports(const std::vector<nlohmann::json>& records) {
  std::map<std::tuple<std::string, std::string, std::uint64_t>, SummaryRow> rows;
  std::map<std::string, std::string> gate_verdicts;
  auto add_bench = [&](const nlohmann::json& b) {
    const auto key = std::make_tuple(b.value("store", ""), b.value("workload", ""),
                                     b.value("memory_budget_bytes", std::uint64_t{0}));
    auto& row = rows[key];
    row.store = std::get<0>(key);
    row.workload = std::get<1>(key);
    row.budget = std::get<2>(key);
    for (const auto& r : b.value("runs", nlohmann::json::array())) row.throughputs.push_back(r.value("throughput_mops", 0.0));
    row.p99_us = std::max(row.p99_us, b.value("latency_p99_us", 0.0));
    row.budget_peak = std::max(row.budget_peak, b.value("budget_peak_bytes", std::uint64_t{0}));
    for (const auto& w : b.value("watermarks", nlohmann::json::array()))
      if (std::find(row.watermarks.begin(), row.watermarks.end(), w.get<std::string>()) == row.watermarks.end())
        row.watermarks.push_back(w.get<std::string>());
  };
  for (const auto& r : records) {
    const std::string kind = r.value("kind", "");
    if (kind == "bench") add_bench(r);
    if (kind == "comparison") {
      add_bench(r.at("a"));
      add_bench(r.at("b"));
    }
    if (kind == "gate") gate_verdicts[r.value("store", "")] = r.value("verdict", "");
  }
  nlohmann::json out = nlohmann::json::array();
  for (auto& [key, row] : rows) {
    double mean = 0;
    for (double t : row.throughputs) mean += t;
    if (!row.throughputs.empty()) mean /= static_cast<double>(row.throughputs.size());
    double ss = 0;
    for (double t : row.throughputs) ss += (t - mean) * (t - mean);
    const double sd = row.throughputs.size() > 1 ? std::sqrt(ss / static_cast<double>(row.throughputs.size() - 1)) : 0;
    auto g = gate_verdicts.find(row.store);
    out.push_back({{"store", row.store},
                   {"workload", row.workload},
                   {"memory_budget_bytes", row.budget},
                   {"runs", row.throughputs.size()},
                   {"throughput_mops_mean", mean},
                   {"throughput_mops_stddev", sd},
                   {"latency_p99_us_max", row.p99_us},
                   {"budget_peak_bytes", row.budget_peak},
                   {"gate", g == gate_verdicts.end() ? "-" : g->second},
                   {"watermarks", row.watermarks}});
  }
  return out;
}

inline std::string format_summary(const nlohmann::json& rows) {
  std::ostringstream os;
  char line[512];
  std::snprintf(line, sizeof line, "%-30s %-56s %9s %4s %10s %8s %10s %s\n", "store", "workload", "budgetMiB", "runs",
                "Mops/s", "stddev", "p99(us)", "flags");
  os << line;
  for (const auto& r : rows) {
    std::string flags;
    for (const auto& w : r.at("watermarks")) flags += (flags.empty() ? "" : ",") + w.get<std::string>();
    std::snprintf(line, sizeof line, "%-30s %-56s %9llu %4zu %10.4f %8.4f %10.2f %s\n",
                  r.at("store").get<std::string>().c_str(), r.at("workload").get<std::string>().c_str(),
                  static_cast<unsigned long long>(r.at("memory_budget_bytes").get<std::uint64_t>() >> 20),
                  r.at("runs").get<std::size_t>(), r.at("throughput_mops_mean").get<double>(),
                  r.at("throughput_mops_stddev").get<double>(), r.at("latency_p99_us_max").get<double>(),
                  flags.c_str());
    os << line;
  }
  return os.str();
}

// Reads every *.jsonl under dir, writes summary.json next to them, returns the rows.
inline nlohmann::json summarize_dir(const fs::path& dir) {
  auto rows = merge_reports(read_reports(dir));
  std::ofstream out(dir / kSummaryFile);
  out << rows.dump(2) << '\n';
  if (!out) throw ConfigError("cannot write " + (dir / kSummaryFile).string());
  return rows;
}

}  // namespace kvbench
