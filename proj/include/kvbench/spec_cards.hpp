#pragma once

// Specification cards: the environment / workload / requirement triple that
// fully describes one evaluation run.
//
// The accepted document format is JSON, relaxed just enough that the cards as
// they are usually printed parse unmodified: `//` and `/* */` comments,
// unquoted member names, trailing commas, and either one object holding
// "environment" / "workload" / "requirement" members or a sequence of up to
// three bare card objects (each card is recognised by its fields).

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "json.hpp"
#include "kvbench/common/errors.hpp"

namespace kvbench {

using json = nlohmann::json;

enum class Op : std::uint8_t { read = 0, upsert = 1, rmw = 2, remove = 3 };
inline constexpr std::array<Op, 4> kAllOps{Op::read, Op::upsert, Op::rmw, Op::remove};

constexpr std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::read: return "Read";
    case Op::upsert: return "Upsert";
    case Op::rmw: return "RMW";
    case Op::remove: return "Delete";
  }
  return "?";
}

inline std::optional<Op> op_from_name(std::string_view name) noexcept {
  for (Op op : kAllOps)
    if (op_name(op) == name) return op;
  return std::nullopt;
}

inline constexpr std::string_view kReadSemantics = "last Upsert; empty after Delete";
inline constexpr std::string_view kMonotonicityContract = "per-thread: r2 never without r1";
inline constexpr std::string_view kConcurrencyContract = "multi-threaded safe; no torn reads";
inline constexpr std::string_view kObjective = "maximize-throughput";
inline constexpr std::uint64_t kGiB = 1ULL << 30;
inline constexpr std::uint64_t kMiB = 1ULL << 20;
inline constexpr std::uint32_t kMaxValueBytes = 65535;

struct EnvironmentCard {
  std::uint32_t cpu_threads = 1;
  std::uint64_t memory_budget_bytes = 0;
  double operational_headroom = 0.15;
  std::string storage_path = "kvbench-data";
  std::uint64_t storage_capacity_bytes = 0;  // 0: unspecified
  // Descriptive hardware strings as printed on the card; not interpreted.
  std::string cpu;
  std::string memory;
  std::string storage;

  std::uint64_t effective_budget() const noexcept {
    return static_cast<std::uint64_t>(
        std::floor(static_cast<double>(memory_budget_bytes) * (1.0 - operational_headroom)));
  }
  bool operator==(const EnvironmentCard&) const = default;
};

struct FixedSize {
  std::uint32_t bytes = 100;
  bool operator==(const FixedSize&) const = default;
};
struct BimodalSize {
  std::uint32_t size_a = 20;
  std::uint32_t size_b = 200;
  double frac_a = 0.5;
  bool operator==(const BimodalSize&) const = default;
};
// Short-value tail: frac_zero of values are empty, frac_small are 1..7 bytes
// (uniform), the rest are `bytes` long.
struct InlineTailSize {
  double frac_zero = 0.0;
  double frac_small = 0.0;
  std::uint32_t bytes = 100;
  bool operator==(const InlineTailSize&) const = default;
};
using ValueSizeSpec = std::variant<FixedSize, BimodalSize, InlineTailSize>;

struct Zipfian {
  double theta = 0.99;
  bool operator==(const Zipfian&) const = default;
};
struct Uniform {
  bool operator==(const Uniform&) const = default;
};
struct TraceReplay {
  std::string path;
  bool operator==(const TraceReplay&) const = default;
};
using Distribution = std::variant<Zipfian, Uniform, TraceReplay>;

struct OperationMix {
  std::array<double, 4> fraction{};  // indexed by Op
  double operator[](Op op) const noexcept { return fraction[static_cast<std::size_t>(op)]; }
  double& operator[](Op op) noexcept { return fraction[static_cast<std::size_t>(op)]; }
  bool operator==(const OperationMix&) const = default;
};

struct WorkloadCard {
  std::string key_type = "uint64_t";
  ValueSizeSpec value_size = FixedSize{};
  std::uint64_t num_keys = 0;
  Distribution distribution = Zipfian{};
  OperationMix mix;
  double duration_sec = 30;
  std::uint32_t burst_len = 0;
  bool operator==(const WorkloadCard&) const = default;
};

struct RequirementCard {
  std::array<bool, 4> api{};  // indexed by Op
  std::string read_semantics{kReadSemantics};
  bool monotonicity = false;
  bool torn_reads_forbidden = false;
  std::string objective{kObjective};

  bool allows(Op op) const noexcept { return api[static_cast<std::size_t>(op)]; }
  bool operator==(const RequirementCard&) const = default;
};

struct SpecCard {
  EnvironmentCard environment;
  WorkloadCard workload;
  RequirementCard requirement;
  bool operator==(const SpecCard&) const = default;
};

inline std::uint32_t default_cpu_threads() noexcept {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min(16u, hw);
}

namespace detail {

// Rewrites the relaxed card syntax into strict JSON for nlohmann::json.
inline std::string normalize_relaxed_json(std::string_view in) {
  std::string out;
  out.reserve(in.size() + 16);
  int depth = 0;
  int top_level_values = 0;
  std::size_t i = 0;
  auto is_ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto is_ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };

  while (i < in.size()) {
    const char c = in[i];
    if (c == '"') {
      const std::size_t start = i++;
      while (i < in.size() && in[i] != '"') i += (in[i] == '\\') ? 2 : 1;
      if (i >= in.size()) throw SyntaxError("unterminated string", start);
      ++i;
      if (depth == 0) ++top_level_values;
      out.append(in.substr(start, i - start));
      continue;
    }
    if (c == '/' && i + 1 < in.size() && in[i + 1] == '/') {
      while (i < in.size() && in[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < in.size() && in[i + 1] == '*') {
      const std::size_t start = i;
      const auto end = in.find("*/", i + 2);
      if (end == std::string_view::npos) throw SyntaxError("unterminated comment", start);
      i = end + 2;
      out.push_back(' ');
      continue;
    }
    if (c == '{' || c == '[') {
      if (depth == 0) {
        if (++top_level_values > 1) out.push_back(',');
      }
      ++depth;
      out.push_back(c);
      ++i;
      continue;
    }
    if (c == '}' || c == ']') {
      // drop a trailing comma before the closer
      auto last = out.find_last_not_of(" \t\r\n");
      if (last != std::string::npos && out[last] == ',') out.erase(last, 1);
      if (--depth < 0) throw SyntaxError("unbalanced closing bracket", i);
      out.push_back(c);
      ++i;
      continue;
    }
    if (is_ident_start(c)) {
      const std::size_t start = i;
      while (i < in.size() && is_ident(in[i])) ++i;
      const std::string_view word = in.substr(start, i - start);
      std::size_t j = i;
      while (j < in.size() && std::isspace(static_cast<unsigned char>(in[j]))) ++j;
      const bool is_member_name = j < in.size() && in[j] == ':';
      if (is_member_name) {
        out.push_back('"');
        out.append(word);
        out.push_back('"');
      } else {
        out.append(word);
      }
      if (depth == 0) ++top_level_values;
      continue;
    }
    if (depth == 0 && !std::isspace(static_cast<unsigned char>(c))) ++top_level_values;
    out.push_back(c);
    ++i;
  }
  if (depth != 0) throw SyntaxError("unbalanced brackets", in.size());
  if (top_level_values > 1) return "[" + out + "]";
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) throw ValidationError(path, "expected a number");
  return j.get<double>();
}

inline std::uint64_t count_at(const json& j, const std::string& path) {
  if (j.is_number_unsigned() || (j.is_number_integer() && j.get<std::int64_t>() >= 0))
    return j.get<std::uint64_t>();
  if (j.is_number_float()) {
    const double d = j.get<double>();
    if (d >= 0 && std::floor(d) == d && d < 1.8e19) return static_cast<std::uint64_t>(d);
  }
  throw ValidationError(path, "expected a non-negative integer");
}

inline const std::string& string_at(const json& j, const std::string& path) {
  if (!j.is_string()) throw ValidationError(path, "expected a string");
  return j.get_ref<const std::string&>();
}

inline void reject_unknown(const json& obj, const std::string& path,
                           std::initializer_list<std::string_view> known) {
  for (const auto& [name, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), name) == known.end())
      throw ValidationError(path + "." + name, "unknown field");
  }
}

inline Distribution parse_distribution(const std::string& s, const std::string& path) {
  auto inside = [&](std::string_view prefix) -> std::optional<std::string> {
    if (s.size() < prefix.size() + 2 || s.compare(0, prefix.size(), prefix) != 0 ||
        s[prefix.size()] != '(' || s.back() != ')')
      return std::nullopt;
    return s.substr(prefix.size() + 1, s.size() - prefix.size() - 2);
  };
  if (s == "uniform") return Uniform{};
  if (auto arg = inside("zipfian")) {
    std::string_view a = *arg;
    if (a.starts_with("theta=")) a.remove_prefix(6);
    double theta = 0;
    auto [end, ec] = std::from_chars(a.data(), a.data() + a.size(), theta);
    if (ec != std::errc{} || end != a.data() + a.size())
      throw ValidationError(path, "cannot parse zipfian theta in '" + s + "'");
    if (!(theta >= 0) || !std::isfinite(theta)) throw ValidationError(path, "zipfian theta must be >= 0");
    return Zipfian{theta};
  }
  if (auto arg = inside("trace")) {
    if (arg->empty()) throw ValidationError(path, "trace() needs a path");
    return TraceReplay{*arg};
  }
  throw ValidationError(path, "unknown distribution '" + s + "'");
}

inline std::string distribution_string(const Distribution& d) {
  if (const auto* z = std::get_if<Zipfian>(&d)) return "zipfian(theta=" + format_double(z->theta) + ")";
  if (std::holds_alternative<Uniform>(d)) return "uniform";
  return "trace(" + std::get<TraceReplay>(d).path + ")";
}

inline void check_size(std::uint64_t v, const std::string& path) {
  if (v > kMaxValueBytes) throw ValidationError(path, "value size exceeds 65535 bytes");
}

inline void check_fraction(double v, const std::string& path) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(path, "fraction must lie in [0, 1]");
}

inline ValueSizeSpec parse_value_size(const json& j, const std::string& path) {
  if (j.is_number()) {
    const auto v = count_at(j, path);
    check_size(v, path);
    return FixedSize{static_cast<std::uint32_t>(v)};
  }
  if (!j.is_object() || j.size() != 1) throw ValidationError(path, "expected a byte count or {bimodal|inline_tail: {...}}");
  const auto& [kind, body] = *j.items().begin();
  const std::string sub = path + "." + kind;
  if (!body.is_object()) throw ValidationError(sub, "expected an object");
  if (kind == "bimodal") {
    reject_unknown(body, sub, {"size_a", "size_b", "frac_a"});
    BimodalSize b;
    if (body.contains("size_a")) b.size_a = static_cast<std::uint32_t>(count_at(body["size_a"], sub + ".size_a"));
    if (body.contains("size_b")) b.size_b = static_cast<std::uint32_t>(count_at(body["size_b"], sub + ".size_b"));
    if (body.contains("frac_a")) b.frac_a = number_at(body["frac_a"], sub + ".frac_a");
    check_size(b.size_a, sub + ".size_a");
    check_size(b.size_b, sub + ".size_b");
    check_fraction(b.frac_a, sub + ".frac_a");
    return b;
  }
  if (kind == "inline_tail") {
    reject_unknown(body, sub, {"frac_zero", "frac_small", "size"});
    InlineTailSize t;
    if (body.contains("frac_zero")) t.frac_zero = number_at(body["frac_zero"], sub + ".frac_zero");
    if (body.contains("frac_small")) t.frac_small = number_at(body["frac_small"], sub + ".frac_small");
    if (body.contains("size")) t.bytes = static_cast<std::uint32_t>(count_at(body["size"], sub + ".size"));
    check_fraction(t.frac_zero, sub + ".frac_zero");
    check_fraction(t.frac_small, sub + ".frac_small");
    if (t.frac_zero + t.frac_small > 1.0 + 1e-9) throw ValidationError(sub, "frac_zero + frac_small exceeds 1");
    check_size(t.bytes, sub + ".size");
    return t;
  }
  throw ValidationError(path, "unknown value size kind '" + kind + "'");
}

inline json value_size_json(const ValueSizeSpec& v) {
  if (const auto* f = std::get_if<FixedSize>(&v)) return f->bytes;
  if (const auto* b = std::get_if<BimodalSize>(&v))
    return json{{"bimodal", {{"size_a", b->size_a}, {"size_b", b->size_b}, {"frac_a", b->frac_a}}}};
  const auto& t = std::get<InlineTailSize>(v);
  return json{{"inline_tail", {{"frac_zero", t.frac_zero}, {"frac_small", t.frac_small}, {"size", t.bytes}}}};
}

inline EnvironmentCard parse_environment(const json& j) {
  const std::string p = "environment";
  reject_unknown(j, p,
                 {"cpu", "memory", "storage", "memory_budget_gb", "memory_budget_bytes", "cpu_threads",
                  "operational_headroom", "storage_path", "storage_capacity_bytes"});
  EnvironmentCard env;
  env.cpu_threads = default_cpu_threads();
  if (j.contains("cpu")) env.cpu = string_at(j["cpu"], p + ".cpu");
  if (j.contains("memory")) env.memory = string_at(j["memory"], p + ".memory");
  if (j.contains("storage")) env.storage = string_at(j["storage"], p + ".storage");
  if (j.contains("memory_budget_bytes")) {
    env.memory_budget_bytes = count_at(j["memory_budget_bytes"], p + ".memory_budget_bytes");
  } else if (j.contains("memory_budget_gb")) {
    const double gb = number_at(j["memory_budget_gb"], p + ".memory_budget_gb");
    if (!(gb > 0)) throw ValidationError(p + ".memory_budget_gb", "must be > 0");
    env.memory_budget_bytes = static_cast<std::uint64_t>(std::llround(gb * static_cast<double>(kGiB)));
  } else {
    throw ValidationError(p + ".memory_budget_gb", "missing");
  }
  if (env.memory_budget_bytes == 0) throw ValidationError(p + ".memory_budget_bytes", "must be > 0");
  if (j.contains("cpu_threads")) {
    const auto t = count_at(j["cpu_threads"], p + ".cpu_threads");
    if (t == 0 || t > 64) throw ValidationError(p + ".cpu_threads", "must be in [1, 64]");
    env.cpu_threads = static_cast<std::uint32_t>(t);
  }
  if (j.contains("operational_headroom"))
    env.operational_headroom = number_at(j["operational_headroom"], p + ".operational_headroom");
  if (!(env.operational_headroom >= 0.0 && env.operational_headroom <= 0.5))
    throw ValidationError(p + ".operational_headroom", "must lie in [0, 0.5]");
  if (j.contains("storage_path")) env.storage_path = string_at(j["storage_path"], p + ".storage_path");
  if (env.storage_path.empty()) throw ValidationError(p + ".storage_path", "must not be empty");
  if (j.contains("storage_capacity_bytes"))
    env.storage_capacity_bytes = count_at(j["storage_capacity_bytes"], p + ".storage_capacity_bytes");
  return env;
}

inline WorkloadCard parse_workload(const json& j) {
  const std::string p = "workload";
  reject_unknown(j, p,
                 {"key_type", "value_size_bytes", "num_keys", "distribution", "mix", "duration_sec",
                  "burst_len"});
  WorkloadCard w;
  if (j.contains("key_type")) w.key_type = string_at(j["key_type"], p + ".key_type");
  if (w.key_type != "uint64_t" && w.key_type != "u64")
    throw ValidationError(p + ".key_type", "only 64-bit unsigned keys are supported");
  w.key_type = "uint64_t";
  if (!j.contains("value_size_bytes")) throw ValidationError(p + ".value_size_bytes", "missing");
  w.value_size = parse_value_size(j["value_size_bytes"], p + ".value_size_bytes");
  if (!j.contains("num_keys")) throw ValidationError(p + ".num_keys", "missing");
  w.num_keys = count_at(j["num_keys"], p + ".num_keys");
  if (w.num_keys == 0) throw ValidationError(p + ".num_keys", "must be > 0");
  if (!j.contains("distribution")) throw ValidationError(p + ".distribution", "missing");
  w.distribution = parse_distribution(string_at(j["distribution"], p + ".distribution"), p + ".distribution");
  if (!j.contains("mix") || !j["mix"].is_object()) throw ValidationError(p + ".mix", "missing or not an object");
  double sum = 0;
  for (const auto& [name, value] : j["mix"].items()) {
    const auto op = op_from_name(name);
    if (!op) throw ValidationError(p + ".mix", "unknown operation '" + name + "'");
    const double f = number_at(value, p + ".mix." + name);
    if (!(f >= 0)) throw ValidationError(p + ".mix", "fractions must be nonnegative");
    w.mix[*op] = f;
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError(p + ".mix", "fractions sum to " + format_double(sum) + ", expected 1");
  if (!j.contains("duration_sec")) throw ValidationError(p + ".duration_sec", "missing");
  w.duration_sec = number_at(j["duration_sec"], p + ".duration_sec");
  if (!(w.duration_sec > 0)) throw ValidationError(p + ".duration_sec", "must be > 0");
  if (j.contains("burst_len")) w.burst_len = static_cast<std::uint32_t>(count_at(j["burst_len"], p + ".burst_len"));
  return w;
}

inline RequirementCard parse_requirement(const json& j) {
  const std::string p = "requirement";
  reject_unknown(j, p,
                 {"api", "read_semantics", "monotonicity", "concurrency", "torn_reads_forbidden", "objective"});
  RequirementCard r;
  if (!j.contains("api") || !j["api"].is_array()) throw ValidationError(p + ".api", "missing or not an array");
  for (const auto& e : j["api"]) {
    const auto op = op_from_name(string_at(e, p + ".api"));
    if (!op) throw ValidationError(p + ".api", "unknown operation '" + e.get<std::string>() + "'");
    r.api[static_cast<std::size_t>(*op)] = true;
  }
  if (!j.contains("read_semantics")) throw ValidationError(p + ".read_semantics", "missing");
  r.read_semantics = string_at(j["read_semantics"], p + ".read_semantics");
  if (r.read_semantics != kReadSemantics)
    throw UnsupportedSemantics("read_semantics '" + r.read_semantics + "' is not supported; expected '" +
                               std::string(kReadSemantics) + "'");
  if (j.contains("monotonicity")) {
    const auto& m = j["monotonicity"];
    if (m.is_boolean()) {
      r.monotonicity = m.get<bool>();
    } else if (m.is_string() && m.get<std::string>() == kMonotonicityContract) {
      r.monotonicity = true;
    } else {
      throw ValidationError(p + ".monotonicity", "expected a boolean or '" + std::string(kMonotonicityContract) + "'");
    }
  }
  if (j.contains("concurrency")) {
    if (string_at(j["concurrency"], p + ".concurrency") != kConcurrencyContract)
      throw ValidationError(p + ".concurrency", "expected '" + std::string(kConcurrencyContract) + "'");
    r.torn_reads_forbidden = true;
  }
  if (j.contains("torn_reads_forbidden")) {
    if (!j["torn_reads_forbidden"].is_boolean())
      throw ValidationError(p + ".torn_reads_forbidden", "expected a boolean");
    r.torn_reads_forbidden = j["torn_reads_forbidden"].get<bool>();
  }
  if (j.contains("objective")) {
    const auto& o = string_at(j["objective"], p + ".objective");
    if (o != kObjective && o != "maximize throughput" && o != "maximize throughput (Mops/s)")
      throw ValidationError(p + ".objective", "only maximize-throughput is supported");
  }
  return r;
}

enum class CardKind { environment, workload, requirement };

inline std::optional<CardKind> classify_card(const json& j) {
  if (j.contains("api") || j.contains("read_semantics")) return CardKind::requirement;
  if (j.contains("num_keys") || j.contains("distribution") || j.contains("mix")) return CardKind::workload;
  if (j.contains("memory_budget_gb") || j.contains("memory_budget_bytes")) return CardKind::environment;
  return std::nullopt;
}

}  // namespace detail

inline void validate_card(const SpecCard& card) {
  for (Op op : kAllOps) {
    if (card.workload.mix[op] > 0 && !card.requirement.allows(op))
      throw ValidationError("workload.mix", "operation " + std::string(op_name(op)) + " is not in the api");
  }
}

inline SpecCard parse_spec(std::string_view text) {
  json doc;
  const std::string strict = detail::normalize_relaxed_json(text);
  try {
    doc = json::parse(strict);
  } catch (const json::parse_error& e) {
    throw SyntaxError(e.what(), e.byte);
  }

  const json* env = nullptr;
  const json* wl = nullptr;
  const json* req = nullptr;
  auto assign = [](const json*& slot, const json& j, const char* name) {
    if (slot != nullptr) throw ValidationError(name, "card given twice");
    slot = &j;
  };
  if (doc.is_object() && (doc.contains("environment") || doc.contains("workload") || doc.contains("requirement"))) {
    detail::reject_unknown(doc, "$", {"environment", "workload", "requirement"});
    if (doc.contains("environment")) env = &doc["environment"];
    if (doc.contains("workload")) wl = &doc["workload"];
    if (doc.contains("requirement")) req = &doc["requirement"];
  } else {
    const json cards = doc.is_array() ? doc : json::array({doc});
    doc = cards;
    for (const auto& c : doc) {
      if (!c.is_object()) throw ValidationError("$", "each card must be an object");
      switch (auto kind = detail::classify_card(c); kind.value_or(detail::CardKind::environment)) {
        case detail::CardKind::environment:
          if (!kind) throw ValidationError("$", "cannot tell which card an object is");
          assign(env, c, "environment");
          break;
        case detail::CardKind::workload: assign(wl, c, "workload"); break;
        case detail::CardKind::requirement: assign(req, c, "requirement"); break;
      }
    }
  }
  if (env == nullptr || !env->is_object()) throw ValidationError("environment", "missing card");
  if (wl == nullptr || !wl->is_object()) throw ValidationError("workload", "missing card");
  if (req == nullptr || !req->is_object()) throw ValidationError("requirement", "missing card");

  SpecCard card{detail::parse_environment(*env), detail::parse_workload(*wl), detail::parse_requirement(*req)};
  validate_card(card);
  return card;
}

inline json to_json(const SpecCard& card) {
  const auto& e = card.environment;
  const auto& w = card.workload;
  const auto& r = card.requirement;
  json env{{"cpu_threads", e.cpu_threads},
           {"memory_budget_bytes", e.memory_budget_bytes},
           {"operational_headroom", e.operational_headroom},
           {"storage_path", e.storage_path},
           {"storage_capacity_bytes", e.storage_capacity_bytes}};
  if (!e.cpu.empty()) env["cpu"] = e.cpu;
  if (!e.memory.empty()) env["memory"] = e.memory;
  if (!e.storage.empty()) env["storage"] = e.storage;

  json mix = json::object();
  for (Op op : kAllOps)
    if (w.mix[op] > 0) mix[std::string(op_name(op))] = w.mix[op];
  json api = json::array();
  for (Op op : kAllOps)
    if (r.allows(op)) api.push_back(std::string(op_name(op)));

  return json{{"environment", env},
              {"workload",
               {{"key_type", w.key_type},
                {"value_size_bytes", detail::value_size_json(w.value_size)},
                {"num_keys", w.num_keys},
                {"distribution", detail::distribution_string(w.distribution)},
                {"mix", mix},
                {"duration_sec", w.duration_sec},
                {"burst_len", w.burst_len}}},
              {"requirement",
               {{"api", api},
                {"read_semantics", r.read_semantics},
                {"monotonicity", r.monotonicity},
                {"torn_reads_forbidden", r.torn_reads_forbidden},
                {"objective", r.objective}}}};
}

inline std::string serialize(const SpecCard& card) { return to_json(card).dump(2); }

// Shrinks a card for desk-scale runs. Mix, distribution and value sizes are
// left untouched.
inline SpecCard desk_scale(const SpecCard& card, double factor) {
  if (!(factor > 0.0) || factor > 1.0) throw ValidationError("factor", "desk scale factor must lie in (0, 1]");
  if (factor == 1.0) return card;
  SpecCard out = card;
  auto scaled = [factor](double v) { return std::llround(v * factor); };
  out.workload.num_keys =
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(scaled(static_cast<double>(card.workload.num_keys))));
  out.workload.duration_sec = std::max<double>(1.0, static_cast<double>(scaled(card.workload.duration_sec)));
  out.environment.memory_budget_bytes = std::max<std::uint64_t>(
      64 * kMiB, static_cast<std::uint64_t>(scaled(static_cast<double>(card.environment.memory_budget_bytes))));
  return out;
}

inline std::string describe_value_size(const ValueSizeSpec& v) {
  if (const auto* f = std::get_if<FixedSize>(&v)) return std::to_string(f->bytes) + "B";
  if (const auto* b = std::get_if<BimodalSize>(&v))
    return "bimodal(" + std::to_string(b->size_a) + "B/" + std::to_string(b->size_b) + "B," +
           detail::format_double(b->frac_a) + ")";
  const auto& t = std::get<InlineTailSize>(v);
  return "inline_tail(" + detail::format_double(t.frac_zero) + "," + detail::format_double(t.frac_small) + "," +
         std::to_string(t.bytes) + "B)";
}

// Short label used to key report rows, e.g. "zipfian(theta=0.99) R50/U50 100B".
inline std::string workload_label(const WorkloadCard& w) {
  std::string mix;
  for (Op op : kAllOps) {
    if (w.mix[op] <= 0) continue;
    if (!mix.empty()) mix += "/";
    mix += std::string(op_name(op)).substr(0, op == Op::rmw ? 3 : 1) +
           std::to_string(static_cast<int>(std::lround(w.mix[op] * 100)));
  }
  std::string label = detail::distribution_string(w.distribution) + " " + mix + " " + describe_value_size(w.value_size);
  if (w.burst_len > 0) label += " burst" + std::to_string(w.burst_len);
  return label;
}

}  // namespace kvbench
