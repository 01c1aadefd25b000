#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace kvbench;
using namespace kvbench::testing;

TEST(SpecCards, FullScaleCardParsesToStatedValues) {
  const SpecCard c = parse_spec(kFullScaleCard);
  EXPECT_EQ(c.environment.memory_budget_bytes, 8ULL << 30);
  EXPECT_DOUBLE_EQ(c.environment.operational_headroom, 0.15);
  EXPECT_EQ(c.environment.cpu, "64 vCPU");
  EXPECT_EQ(c.workload.num_keys, 250'000'000u);
  EXPECT_EQ(c.workload.key_type, "uint64_t");
  ASSERT_TRUE(std::holds_alternative<FixedSize>(c.workload.value_size));
  EXPECT_EQ(std::get<FixedSize>(c.workload.value_size).bytes, 100u);
  ASSERT_TRUE(std::holds_alternative<Zipfian>(c.workload.distribution));
  EXPECT_DOUBLE_EQ(std::get<Zipfian>(c.workload.distribution).theta, 0.99);
  EXPECT_DOUBLE_EQ(c.workload.mix[Op::read], 0.5);
  EXPECT_DOUBLE_EQ(c.workload.mix[Op::upsert], 0.5);
  EXPECT_DOUBLE_EQ(c.workload.mix[Op::rmw], 0.0);
  EXPECT_DOUBLE_EQ(c.workload.duration_sec, 30.0);
  EXPECT_EQ(c.workload.burst_len, 0u);
  for (Op op : kAllOps) EXPECT_TRUE(c.requirement.allows(op));
  EXPECT_TRUE(c.requirement.monotonicity);
  EXPECT_TRUE(c.requirement.torn_reads_forbidden);
  EXPECT_EQ(c.requirement.read_semantics, "last Upsert; empty after Delete");
}

TEST(SpecCards, MissingHeadroomDefaultsTo15Percent) {
  const SpecCard c = parse_spec(card_text(R"({ value_size_bytes: 8, num_keys: 10, distribution: "uniform",
      mix: {"Read": 1.0}, duration_sec: 1 })"));
  EXPECT_DOUBLE_EQ(c.environment.operational_headroom, 0.15);
  EXPECT_EQ(c.environment.effective_budget(), static_cast<std::uint64_t>((256ULL << 20) * 0.85));
  EXPECT_EQ(c.environment.cpu_threads, default_cpu_threads());
}

TEST(SpecCards, MixNotSummingToOneIsRejectedAtMix) {
  try {
    parse_spec(card_text(R"({ value_size_bytes: 8, num_keys: 10, distribution: "uniform",
        mix: {"Read": 0.5, "Upsert": 0.4}, duration_sec: 1 })"));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_TRUE(e.field().ends_with("mix")) << e.field();
  }
}

TEST(SpecCards, ErrorKinds) {
  EXPECT_THROW(parse_spec("{ api: [\"Read\" "), SyntaxError);
  EXPECT_THROW(parse_spec("{ api: [\"Read\"], read_semantics: \"last writer wins\" }\n{ memory_budget_gb: 1 }\n"
                          "{ value_size_bytes: 8, num_keys: 10, distribution: \"uniform\", mix: {\"Read\": 1}, "
                          "duration_sec: 1 }"),
               UnsupportedSemantics);
  EXPECT_THROW(parse_spec(card_text(R"({ value_size_bytes: 8, num_keys: 0, distribution: "uniform",
      mix: {"Read": 1.0}, duration_sec: 1 })")),
               ValidationError);
  EXPECT_THROW(parse_spec(card_text(R"({ value_size_bytes: 70000, num_keys: 5, distribution: "uniform",
      mix: {"Read": 1.0}, duration_sec: 1 })")),
               ValidationError);
  EXPECT_THROW(parse_spec(card_text(R"x({ value_size_bytes: 8, num_keys: 5, distribution: "zipfian(theta=-1)",
      mix: {"Read": 1.0}, duration_sec: 1 })x")),
               ValidationError);
  EXPECT_THROW(parse_spec(card_text(R"({ value_size_bytes: 8, num_keys: 5, distribution: "uniform",
      mix: {"Read": 1.0}, duration_sec: 1 })", 0)),
               ValidationError);
  EXPECT_THROW(parse_spec("{ api: [\"Read\"], read_semantics: \"last Upsert; empty after Delete\" }\n"
                          "{ memory_budget_gb: 1, operational_headroom: 0.6 }\n"
                          "{ value_size_bytes: 8, num_keys: 10, distribution: \"uniform\", mix: {\"Read\": 1}, "
                          "duration_sec: 1 }"),
               ValidationError);
}

TEST(SpecCards, MixUsingOpOutsideApiIsRejected) {
  EXPECT_THROW(parse_spec(card_text(R"({ value_size_bytes: 8, num_keys: 10, distribution: "uniform",
      mix: {"Read": 0.5, "RMW": 0.5}, duration_sec: 1 })",
                                    256ULL << 20, R"(["Read", "Upsert"])")),
               ValidationError);
}

TEST(SpecCards, DeskScaleFullScaleCard) {
  const SpecCard c = desk_scale(parse_spec(kFullScaleCard), 0.004);
  EXPECT_EQ(c.workload.num_keys, 1'000'000u);
  EXPECT_EQ(c.environment.memory_budget_bytes, 64ULL << 20);  // 32 MiB floored up to 64 MiB
  EXPECT_DOUBLE_EQ(c.workload.duration_sec, 1.0);
}

TEST(SpecCards, DeskScaleIdentityAndPreconditions) {
  const SpecCard c = parse_spec(kFullScaleCard);
  EXPECT_EQ(desk_scale(c, 1.0), c);
  EXPECT_THROW(desk_scale(c, 0.0), ValidationError);
  EXPECT_THROW(desk_scale(c, -0.5), ValidationError);
  const SpecCard tiny = desk_scale(c, 1e-12);
  EXPECT_EQ(tiny.workload.num_keys, 1u);
  EXPECT_DOUBLE_EQ(tiny.workload.duration_sec, 1.0);
}

namespace {

SpecCard random_card(std::mt19937_64& rng) {
  SpecCard c;
  c.environment.cpu_threads = 1 + static_cast<std::uint32_t>(rng() % 16);
  c.environment.memory_budget_bytes = 1 + rng() % (1ULL << 40);
  c.environment.operational_headroom = static_cast<double>(rng() % 51) / 100.0;
  c.environment.storage_path = "data-" + std::to_string(rng() % 1000);
  switch (rng() % 3) {
    case 0: c.workload.value_size = FixedSize{static_cast<std::uint32_t>(rng() % 65536)}; break;
    case 1:
      c.workload.value_size = BimodalSize{static_cast<std::uint32_t>(rng() % 300),
                                          static_cast<std::uint32_t>(rng() % 3000), static_cast<double>(rng() % 101) / 100};
      break;
    default: {
      const double z = static_cast<double>(rng() % 50) / 100;
      c.workload.value_size = InlineTailSize{z, static_cast<double>(rng() % 50) / 100, static_cast<std::uint32_t>(rng() % 500)};
    }
  }
  c.workload.num_keys = 1 + rng() % 1'000'000'000;
  if (rng() % 2) c.workload.distribution = Zipfian{static_cast<double>(rng() % 200) / 100};
  else c.workload.distribution = Uniform{};
  // fractions in quarters keep the sum exactly 1
  int left = 4;
  for (Op op : {Op::read, Op::upsert, Op::rmw}) {
    const int q = static_cast<int>(rng() % static_cast<std::uint64_t>(left + 1));
    c.workload.mix[op] = q / 4.0;
    left -= q;
  }
  c.workload.mix[Op::remove] = left / 4.0;
  c.workload.duration_sec = 1 + static_cast<double>(rng() % 100);
  c.workload.burst_len = static_cast<std::uint32_t>(rng() % 3) * 32;
  for (Op op : kAllOps) c.requirement.api[static_cast<std::size_t>(op)] = true;
  c.requirement.monotonicity = rng() % 2;
  c.requirement.torn_reads_forbidden = rng() % 2;
  return c;
}

}  // namespace

TEST(SpecCards, SerializeRoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    const SpecCard c = random_card(rng);
    const SpecCard back = parse_spec(serialize(c));
    ASSERT_EQ(back, c) << serialize(c);
    ASSERT_EQ(parse_spec(serialize(back)), back);
  }
  const SpecCard full = parse_spec(kFullScaleCard);
  EXPECT_EQ(parse_spec(serialize(full)), full);
}

TEST(SpecCards, DeskScalePreservesMixDistributionAndSizes) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    const SpecCard c = random_card(rng);
    const double f = static_cast<double>(1 + rng() % 1000) / 1000.0;
    const SpecCard s = desk_scale(c, f);
    EXPECT_EQ(s.workload.mix, c.workload.mix);
    EXPECT_EQ(s.workload.distribution, c.workload.distribution);
    EXPECT_EQ(s.workload.value_size, c.workload.value_size);
    EXPECT_EQ(s.requirement, c.requirement);
    EXPECT_GE(s.workload.num_keys, 1u);
    EXPECT_GE(s.workload.duration_sec, 1.0);
    EXPECT_GE(s.environment.memory_budget_bytes, 64ULL << 20);
  }
}

TEST(SpecCards, SampleCardsValidate) {
  for (const char* name : {"full_scale.spec", "desk_ycsb_a.spec", "cachelib_inline_tail.spec", "inline_read_heavy.spec",
                           "timeseries.spec"}) {
    const fs::path p = fs::path(KVBENCH_SAMPLES_DIR) / name;
    SCOPED_TRACE(p.string());
    EXPECT_NO_THROW(parse_spec(cli::read_file(p.string())));
  }
}
