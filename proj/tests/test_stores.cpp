#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"

using namespace kvbench;
using namespace kvbench::testing;

namespace {

class StoreContract : public ::testing::TestWithParam<std::string> {
 protected:
  ScratchDir dir_{scratch_root(), "contract"};
  ValueFabric fabric_{RunSecret::fresh()};
  std::unique_ptr<KvStore> open(std::uint32_t threads = 1, std::uint64_t keys = 1000) {
    return make_store(GetParam(), store_config(dir_.path(), threads, keys));
  }
};

Bytes env(const ValueFabric& f, std::uint64_t k, std::uint64_t seq, std::size_t len, ThreadId t = 0) {
  return f.make_envelope(k, t, seq, len);
}

}  // namespace

TEST_P(StoreContract, NeverWrittenIsNotFound) {
  auto s = open();
  ValueBuffer b;
  EXPECT_EQ(s->read(0, fabric_.scramble(1), b).status, Status::not_found);
}

TEST_P(StoreContract, UpsertThenReadIsByteIdentical) {
  auto s = open();
  ValueBuffer b;
  for (std::size_t len : {0u, 3u, 7u, 8u, 27u, 28u, 100u, 5000u, 65535u}) {
    const Bytes v = env(fabric_, len, len, len);
    s->upsert(0, fabric_.scramble(len), v);
    const Completion c = s->read(0, fabric_.scramble(len), b);
    ASSERT_EQ(c.status, Status::found) << len;
    EXPECT_TRUE(equal_bytes(c.value, v)) << len;
  }
}

TEST_P(StoreContract, DeleteThenReadIsNotFound) {
  auto s = open();
  ValueBuffer b;
  const Key k = fabric_.scramble(5);
  s->upsert(0, k, env(fabric_, 5, 0, 100));
  s->remove(0, k);
  EXPECT_EQ(s->read(0, k, b).status, Status::not_found);
  s->upsert(0, k, env(fabric_, 5, 1, 3));
  EXPECT_EQ(s->read(0, k, b).status, Status::found);
}

TEST_P(StoreContract, RmwSeesCurrentValue) {
  auto s = open();
  ValueBuffer b;
  const Key k = fabric_.scramble(9);
  int calls_absent = 0;
  auto f = [&](std::optional<ByteView> cur, ValueBuffer& next) {
    if (!cur) ++calls_absent;
    const std::size_t len = cur ? cur->size() + 10 : 30;
    fabric_.write_envelope(next.prepare(len), k, 0, 1);
  };
  s->rmw(0, k, f);
  s->rmw(0, k, f);
  EXPECT_EQ(calls_absent, 1);
  const Completion c = s->read(0, k, b);
  ASSERT_EQ(c.status, Status::found);
  EXPECT_EQ(c.value.size(), 40u);
  EXPECT_TRUE(fabric_.validate(c.value, k).ok());
}

TEST_P(StoreContract, CheckpointCrashRecoverKeepsCheckpointedKeys) {
  auto s = open(1, 200);
  for (std::uint64_t i = 0; i < 100; ++i) s->upsert(0, fabric_.scramble(i), env(fabric_, i, i, 100));
  s->checkpoint();
  s->simulate_crash(CrashMode::fuzzy_checkpoint);
  s->recover();
  ValueBuffer b;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Completion c = s->read(0, fabric_.scramble(i), b);
    ASSERT_EQ(c.status, Status::found) << i;
    EXPECT_TRUE(fabric_.validate(c.value, fabric_.scramble(i)).ok());
  }
}

TEST_P(StoreContract, CrashRightAfterOpenRecoversEmpty) {
  auto s = open();
  s->simulate_crash(CrashMode::no_checkpoint);
  s->recover();
  ValueBuffer b;
  for (std::uint64_t i = 0; i < 50; ++i) EXPECT_EQ(s->read(0, fabric_.scramble(i), b).status, Status::not_found);
}

TEST_P(StoreContract, RecoverPreconditions) {
  auto s = open();
  EXPECT_THROW(s->recover(), RecoveryError);
  s->simulate_crash(CrashMode::no_checkpoint);
  s->recover();
  EXPECT_THROW(s->recover(), RecoveryError);
}

TEST_P(StoreContract, CountersStartAtZeroAndAreMonotone) {
  auto s = open();
  IndicatorCounters c0 = s->snapshot_indicators();
  c0.budget_bytes_in_use = 0;
  EXPECT_EQ(c0, IndicatorCounters{});
  ValueBuffer b;
  std::mt19937_64 rng(1);
  IndicatorCounters prev = s->snapshot_indicators();
  for (int round = 0; round < 20; ++round) {
    for (int i = 0; i < 200; ++i) {
      const std::uint64_t k = rng() % 300;
      if (rng() % 2) s->upsert(0, fabric_.scramble(k), env(fabric_, k, i, rng() % 200));
      else s->read(0, fabric_.scramble(k), b);
    }
    const IndicatorCounters now = s->snapshot_indicators();
    EXPECT_GE(now.ring_hits, prev.ring_hits);
    EXPECT_GE(now.inline_hits, prev.inline_hits);
    EXPECT_GE(now.file_reads, prev.file_reads);
    EXPECT_GE(now.seqlock_retries, prev.seqlock_retries);
    EXPECT_GE(now.probe_steps, prev.probe_steps);
    EXPECT_GE(now.bytes_appended, prev.bytes_appended);
    prev = now;
  }
}

TEST_P(StoreContract, SingleThreadScriptMatchesMapReplay) {
  const Script script = make_script(99, 1, 100'000, 2000);
  auto s = open(1, 2000);
  EXPECT_EQ(run_script(*s, script, fabric_), 0u);
  EXPECT_EQ(dump_state(*s, 2000, fabric_), replay_oracle(script, fabric_));
}

TEST_P(StoreContract, DisjointKeyThreadsMatchIndependentRuns) {
  const Script script = make_script(7, 8, 80'000, 4000);
  auto together = open(8, 4000);
  EXPECT_EQ(run_script(*together, script, fabric_), 0u);
  const auto combined = dump_state(*together, 4000, fabric_);
  // the same per-thread scripts, one fresh store each
  for (std::uint32_t t = 0; t < 8; ++t) {
    Script one = script;
    for (std::uint32_t u = 0; u < 8; ++u)
      if (u != t) one.per_thread[u].clear();
    ScratchDir d(scratch_root(), "solo");
    auto solo = make_store(GetParam(), store_config(d.path(), 8, 4000));
    run_script(*solo, one, fabric_);
    for (const auto& [k, v] : dump_state(*solo, 4000, fabric_)) {
      auto it = combined.find(k);
      ASSERT_NE(it, combined.end());
      EXPECT_EQ(it->second, v);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Honest, StoreContract, ::testing::Values("baseline", "reference"));

TEST(BaselineStore, CrashAtAnyAcknowledgedBoundaryKeepsEverything) {
  ScratchDir dir(scratch_root(), "baseline");
  const ValueFabric f(RunSecret::fresh());
  std::mt19937_64 rng(4);
  for (int boundary : {1, 17, 256, 1000}) {
    BaselineStore s(store_config(dir.path() / std::to_string(boundary), 1, 512));
    std::map<Key, Bytes> expect;
    for (int i = 0; i < boundary; ++i) {
      const std::uint64_t k = rng() % 256;
      Bytes v = f.make_envelope(k, 0, static_cast<std::uint64_t>(i), rng() % 300);
      s.upsert(0, f.scramble(k), v);
      expect[f.scramble(k)] = std::move(v);
    }
    s.simulate_crash(CrashMode::no_checkpoint);
    s.recover();
    ValueBuffer b;
    for (const auto& [k, v] : expect) {
      const Completion c = s.read(0, k, b);
      ASSERT_EQ(c.status, Status::found);
      EXPECT_TRUE(equal_bytes(c.value, v));
    }
  }
}

TEST(BaselineStore, TornLogTailIsTruncated) {
  ScratchDir dir(scratch_root(), "baseline");
  const ValueFabric f(RunSecret::fresh());
  BaselineStore s(store_config(dir.path(), 1, 64));
  for (std::uint64_t i = 0; i < 32; ++i) s.upsert(0, f.scramble(i), f.make_envelope(i, 0, i, 64));
  // chop a few bytes off every shard log
  for (const auto& e : fs::directory_iterator(dir.path())) {
    const auto size = fs::file_size(e.path());
    if (size > 5) fs::resize_file(e.path(), size - 5);
  }
  s.simulate_crash(CrashMode::no_checkpoint);
  EXPECT_NO_THROW(s.recover());
  ValueBuffer b;
  for (std::uint64_t i = 0; i < 32; ++i) {
    const Completion c = s.read(0, f.scramble(i), b);
    if (c.status == Status::found) {
      EXPECT_TRUE(f.validate(c.value, f.scramble(i)).ok());
    }
  }
}

TEST(StoreSelection, KnownAndUnknown) {
  ScratchDir dir(scratch_root(), "select");
  for (const char* sel : {"baseline", "reference", "seeded:reordered-flush", "gallery:II1-flat-array"}) {
    EXPECT_TRUE(is_known_store(sel));
    EXPECT_NE(make_store(sel, store_config(dir.path() / sel, 1, 10)), nullptr);
  }
  EXPECT_FALSE(is_known_store("gallery:nope"));
  EXPECT_THROW(make_store("gallery:nope", store_config(dir.path() / "x", 1, 10)), UnknownVariant);
  EXPECT_THROW(make_store("fast", store_config(dir.path() / "y", 1, 10)), UnknownVariant);
}
