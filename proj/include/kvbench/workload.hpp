#pragma once

// Operation streams: load phase, timed mixes (including time-series bursts),
// and trace replay. Every stream is a pure function of (card, secret, thread).

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kvbench/spec_cards.hpp"
#include "kvbench/value_fabric.hpp"

namespace kvbench {

struct OperationRecord {
  Op op = Op::read;
  std::uint64_t logical_key = 0;
  Key key = 0;  // scrambled
  std::uint32_t payload_len = 0;
  ThreadId thread_id = 0;
  std::uint64_t seq = 0;
  bool operator==(const OperationRecord&) const = default;
};

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(std::mt19937_64& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Rejection-inversion Zipf sampler (Hörmann & Derflinger), constant memory in n.
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double theta) : n_(n), theta_(theta) {
    if (n == 0) throw ValidationError("num_keys", "must be > 0");
    if (!(theta >= 0) || !std::isfinite(theta)) throw ValidationError("theta", "must be >= 0");
    h_integral_x1_ = h_integral(1.5) - 1.0;
    h_integral_n_ = h_integral(static_cast<double>(n) + 0.5);
    s_ = 2.0 - h_integral_inverse(h_integral(2.5) - h(2.0));
  }

  std::uint64_t n() const noexcept { return n_; }
  double theta() const noexcept { return theta_; }

  // Rank in [1, n].
  std::uint64_t sample(std::mt19937_64& rng) const noexcept {
    if (theta_ == 0.0) return 1 + static_cast<std::uint64_t>(unit_double(rng) * static_cast<double>(n_));
    for (;;) {
      const double u = h_integral_n_ + unit_double(rng) * (h_integral_x1_ - h_integral_n_);
      const double x = h_integral_inverse(u);
      double kd = std::floor(x + 0.5);
      if (kd < 1.0) kd = 1.0;
      if (kd > static_cast<double>(n_)) kd = static_cast<double>(n_);
      if (kd - x <= s_ || u >= h_integral(kd + 0.5) - h(kd)) return static_cast<std::uint64_t>(kd);
    }
  }

 private:
  double h_integral(double x) const noexcept {
    const double log_x = std::log(x);
    return helper2((1.0 - theta_) * log_x) * log_x;
  }
  double h(double x) const noexcept { return std::exp(-theta_ * std::log(x)); }
  double h_integral_inverse(double x) const noexcept {
    double t = x * (1.0 - theta_);
    if (t < -1.0) t = -1.0;
    return std::exp(helper1(t) * x);
  }
  static double helper1(double x) noexcept {
    if (std::abs(x) > 1e-8) return std::log1p(x) / x;
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x));
  }
  static double helper2(double x) noexcept {
    if (std::abs(x) > 1e-8) return std::expm1(x) / x;
    return 1.0 + x * 0.5 * (1.0 + x * (1.0 / 3.0) * (1.0 + 0.25 * x));
  }

  std::uint64_t n_;
  double theta_;
  double h_integral_x1_ = 0;
  double h_integral_n_ = 0;
  double s_ = 0;
};

// Draws payload lengths according to a value-size spec.
class ValueSizeSampler {
 public:
  explicit ValueSizeSampler(const ValueSizeSpec& spec) : spec_(spec) {}

  std::uint32_t sample(std::mt19937_64& rng) const noexcept {
    if (const auto* f = std::get_if<FixedSize>(&spec_)) return f->bytes;
    if (const auto* b = std::get_if<BimodalSize>(&spec_)) return unit_double(rng) < b->frac_a ? b->size_a : b->size_b;
    const auto& t = std::get<InlineTailSize>(spec_);
    const double u = unit_double(rng);
    if (u < t.frac_zero) return 0;
    if (u < t.frac_zero + t.frac_small) return 1 + static_cast<std::uint32_t>(rng() % 7);
    return t.bytes;
  }

  std::uint32_t max_len() const noexcept {
    if (const auto* f = std::get_if<FixedSize>(&spec_)) return f->bytes;
    if (const auto* b = std::get_if<BimodalSize>(&spec_)) return std::max(b->size_a, b->size_b);
    const auto& t = std::get<InlineTailSize>(spec_);
    return std::max<std::uint32_t>(t.frac_small > 0 ? 7 : 0, t.bytes);
  }

 private:
  ValueSizeSpec spec_;
};

struct Partition {
  std::uint64_t lo = 0;
  std::uint64_t hi = 0;
  std::uint64_t size() const noexcept { return hi - lo; }
};

inline Partition thread_partition(std::uint64_t num_keys, std::uint32_t tid, std::uint32_t threads) noexcept {
  const auto lo = static_cast<std::uint64_t>((static_cast<unsigned __int128>(num_keys) * tid) / threads);
  const auto hi = static_cast<std::uint64_t>((static_cast<unsigned __int128>(num_keys) * (tid + 1)) / threads);
  return {lo, hi};
}

// Upserts covering this thread's slice of [0, num_keys) exactly once.
class LoadStream {
 public:
  LoadStream(const WorkloadCard& card, const ValueFabric& fabric, ThreadId tid, std::uint32_t threads)
      : fabric_(&fabric),
        sizes_(card.value_size),
        rng_(fabric.derive_seed("load", tid)),
        part_(thread_partition(card.num_keys, tid, threads)),
        next_(part_.lo),
        tid_(tid) {}

  bool next(OperationRecord& rec) {
    if (next_ >= part_.hi) return false;
    rec.op = Op::upsert;
    rec.logical_key = next_++;
    rec.key = fabric_->scramble(rec.logical_key);
    rec.payload_len = sizes_.sample(rng_);
    rec.thread_id = tid_;
    rec.seq = seq_++;
    return true;
  }

  std::uint64_t count() const noexcept { return part_.size(); }
  std::uint64_t next_seq() const noexcept { return seq_; }

 private:
  const ValueFabric* fabric_;
  ValueSizeSampler sizes_;
  std::mt19937_64 rng_;
  Partition part_;
  std::uint64_t next_;
  std::uint64_t seq_ = 0;
  ThreadId tid_;
};

inline std::vector<OperationRecord> load_phase(const WorkloadCard& card, const ValueFabric& fabric,
                                               std::uint32_t threads) {
  std::vector<OperationRecord> out;
  out.reserve(card.num_keys);
  for (std::uint32_t t = 0; t < threads; ++t) {
    LoadStream s(card, fabric, static_cast<ThreadId>(t), threads);
    OperationRecord r;
    while (s.next(r)) out.push_back(r);
  }
  return out;
}

// Endless closed-loop stream for one thread.
//
// With burst_len == 0 each op is drawn independently from the mix and keys
// from the distribution over [0, num_keys). With burst_len > 0 the thread
// walks a sliding window over its own key slice: write bursts of burst_len ops
// alternate Delete(oldest) / Upsert(newest), and after each burst a number of
// reads hits live keys so the overall read fraction matches the mix.
class OperationStream {
 public:
  OperationStream(const WorkloadCard& card, const ValueFabric& fabric, ThreadId tid, std::uint32_t threads,
                  std::uint64_t first_seq = 0)
      : fabric_(&fabric),
        sizes_(card.value_size),
        rng_(fabric.derive_seed("stream", tid)),
        zipf_(card.num_keys, zipf_theta(card.distribution)),
        tid_(tid),
        seq_(first_seq),
        burst_len_(card.burst_len) {
    if (std::holds_alternative<TraceReplay>(card.distribution))
      throw ConfigError("trace distributions are replayed with TraceReader, not generated");
    double acc = 0;
    for (Op op : kAllOps) {
      acc += card.mix[op];
      cumulative_[static_cast<std::size_t>(op)] = acc;
    }
    // absorb rounding into the last op that has weight
    std::size_t last = 0;
    for (std::size_t i = 0; i < 4; ++i)
      if (card.mix.fraction[i] > 0) last = i;
    for (std::size_t i = last; i < 4; ++i) cumulative_[i] = 2.0;
    if (burst_len_ > 0) {
      part_ = thread_partition(card.num_keys, tid, threads);
      if (part_.size() < 2) throw ValidationError("workload.num_keys", "time-series mode needs >= 2 keys per thread");
      window_ = part_.size() / 2;
      const double p = card.mix[Op::read];
      reads_only_ = p >= 1.0;
      reads_per_burst_ = p >= 1.0 ? 0.0 : static_cast<double>(burst_len_) * p / (1.0 - p);
    }
  }

  OperationRecord next() {
    OperationRecord rec;
    rec.thread_id = tid_;
    rec.seq = seq_++;
    if (burst_len_ > 0) {
      next_time_series(rec);
    } else {
      const double u = unit_double(rng_);
      std::size_t i = 0;
      while (u >= cumulative_[i]) ++i;
      rec.op = static_cast<Op>(i);
      rec.logical_key = zipf_.sample(rng_) - 1;
      if (rec.op == Op::upsert || rec.op == Op::rmw) rec.payload_len = sizes_.sample(rng_);
    }
    rec.key = fabric_->scramble(rec.logical_key);
    return rec;
  }

  std::uint64_t next_seq() const noexcept { return seq_; }

 private:
  static double zipf_theta(const Distribution& d) noexcept {
    if (const auto* z = std::get_if<Zipfian>(&d)) return z->theta;
    return 0.0;
  }

  void next_time_series(OperationRecord& rec) {
    if (reads_only_ || reads_pending_ > 0) {
      if (reads_pending_ > 0) --reads_pending_;
      rec.op = Op::read;
      const std::uint64_t u = rng_() % window_;
      rec.logical_key = part_.lo + (pair_ + 1 + u) % part_.size();
      return;
    }
    if (writes_total_++ % 2 == 0) {
      rec.op = Op::remove;
      rec.logical_key = part_.lo + pair_ % part_.size();
    } else {
      rec.op = Op::upsert;
      rec.logical_key = part_.lo + (pair_ + window_) % part_.size();
      rec.payload_len = sizes_.sample(rng_);
      ++pair_;
    }
    if (++writes_in_burst_ == burst_len_) {
      writes_in_burst_ = 0;
      const double whole = std::floor(reads_per_burst_);
      reads_pending_ = static_cast<std::uint64_t>(whole) + (unit_double(rng_) < reads_per_burst_ - whole ? 1 : 0);
    }
  }

  const ValueFabric* fabric_;
  ValueSizeSampler sizes_;
  std::mt19937_64 rng_;
  ZipfSampler zipf_;
  ThreadId tid_;
  std::uint64_t seq_;
  std::array<double, 4> cumulative_{};

  std::uint32_t burst_len_;
  Partition part_{};
  std::uint64_t window_ = 0;
  std::uint64_t pair_ = 0;
  std::uint32_t writes_in_burst_ = 0;
  std::uint64_t writes_total_ = 0;
  std::uint64_t reads_pending_ = 0;
  double reads_per_burst_ = 0;
  bool reads_only_ = false;
};

// Replays `GET|SET|DEL <key> [<size>]` lines. Line i goes to thread i mod threads.
class TraceReader {
 public:
  TraceReader(const std::string& path, const ValueFabric& fabric, ThreadId tid = 0, std::uint32_t threads = 1,
              std::uint32_t default_len = 100)
      : in_(path), fabric_(&fabric), tid_(tid), threads_(threads), default_len_(default_len) {
    if (!in_) throw ConfigError("cannot open trace " + path);
  }

  bool next(OperationRecord& rec) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const std::size_t index = record_index_++;
      OperationRecord parsed = parse(line.substr(first));
      if (index % threads_ != tid_) continue;
      parsed.thread_id = tid_;
      parsed.seq = seq_++;
      rec = parsed;
      return true;
    }
    return false;
  }

 private:
  OperationRecord parse(const std::string& line) const {
    std::istringstream ss(line);
    std::string op;
    std::string key_tok;
    std::string size_tok;
    std::string extra;
    ss >> op >> key_tok >> size_tok >> extra;
    if (!extra.empty()) throw TraceFormatError(line_no_, "trailing tokens");
    OperationRecord rec;
    if (op == "GET") rec.op = Op::read;
    else if (op == "SET") rec.op = Op::upsert;
    else if (op == "DEL") rec.op = Op::remove;
    else throw TraceFormatError(line_no_, "unknown op '" + op + "'");
    rec.logical_key = parse_u64(key_tok, "key");
    if (rec.op == Op::upsert) {
      const std::uint64_t len = size_tok.empty() ? default_len_ : parse_u64(size_tok, "size");
      if (len > kMaxValueBytes) throw TraceFormatError(line_no_, "size exceeds 65535");
      rec.payload_len = static_cast<std::uint32_t>(len);
    } else if (!size_tok.empty()) {
      throw TraceFormatError(line_no_, "size is only valid for SET");
    }
    rec.key = fabric_->scramble(rec.logical_key);
    return rec;
  }

  std::uint64_t parse_u64(const std::string& tok, const char* what) const {
    std::uint64_t v = 0;
    auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc{} || end != tok.data() + tok.size())
      throw TraceFormatError(line_no_, std::string("bad ") + what + " '" + tok + "'");
    return v;
  }

  std::ifstream in_;
  const ValueFabric* fabric_;
  ThreadId tid_;
  std::uint32_t threads_;
  std::uint32_t default_len_;
  std::size_t line_no_ = 0;
  std::size_t record_index_ = 0;
  std::uint64_t seq_ = 0;
};

inline std::vector<OperationRecord> replay_trace(const std::string& path, const ValueFabric& fabric) {
  std::vector<OperationRecord> out;
  TraceReader reader(path, fabric);
  OperationRecord r;
  while (reader.next(r)) out.push_back(r);
  return out;
}

}  // namespace kvbench
