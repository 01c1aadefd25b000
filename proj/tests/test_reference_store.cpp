#include <gtest/gtest.h>

#include <random>
#include <set>

#include "support.hpp"

using namespace kvbench;
using namespace kvbench::testing;

namespace {

struct Fixture : ::testing::Test {
  ScratchDir dir{scratch_root(), "ref"};
  ValueFabric fabric{RunSecret::fresh()};
  ValueBuffer buf;

  ReferenceStore open(std::uint32_t threads = 1, std::uint64_t keys = 1000, std::uint64_t ring = 0) {
    return ReferenceStore(store_config(dir.path(), threads, keys, ring));
  }
  Bytes value(std::uint64_t k, std::uint64_t seq, std::size_t len, ThreadId t = 0) const {
    return fabric.make_envelope(k, t, seq, len);
  }
  Key key(std::uint64_t k) const { return fabric.scramble(k); }
};

using ReferenceTest = Fixture;

}  // namespace

TEST_F(ReferenceTest, LookupCountsProbesAndDeleteKeepsKey) {
  auto s = open();
  const IndicatorCounters c0 = s.snapshot_indicators();
  s.upsert(0, key(1), value(1, 0, 100));
  s.read(0, key(1), buf);
  EXPECT_GE(s.snapshot_indicators().probe_steps - c0.probe_steps, 2u);
  s.remove(0, key(1));
  const auto m = s.meta_of(key(1));
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(meta::tag(*m), meta::Tag::tombstone);
  EXPECT_EQ(s.occupancy(), 1u);
}

TEST_F(ReferenceTest, MeanProbeLengthAtHalfOccupancy) {
  const std::uint64_t n = 65536;  // capacity 131072
  auto s = open(1, n);
  ASSERT_EQ(s.capacity(), 2 * n);
  std::mt19937_64 rng(8);
  std::vector<Key> keys(n);
  for (auto& k : keys) {
    k = rng() | 1;
    s.upsert(0, k, ByteView{});
  }
  EXPECT_EQ(s.occupancy(), s.capacity() / 2);
  EXPECT_THROW(s.upsert(0, rng() | 1, ByteView{}), CapacityError);
  const auto before = s.snapshot_indicators().probe_steps;
  const std::uint64_t lookups = 100'000;
  for (std::uint64_t i = 0; i < lookups; ++i) s.read(0, keys[rng() % n], buf);
  const double mean = static_cast<double>(s.snapshot_indicators().probe_steps - before) / lookups;
  EXPECT_LE(mean, 1.6);
  EXPECT_GE(mean, 1.0);
}

TEST_F(ReferenceTest, ShortValuesGoInline) {
  auto s = open();
  const auto appended = s.snapshot_indicators().bytes_appended;
  s.upsert(0, key(3), value(3, 0, 3));
  const auto m = s.meta_of(key(3));
  ASSERT_TRUE(m);
  EXPECT_EQ(meta::tag(*m), meta::Tag::inline_value);
  EXPECT_EQ(meta::inline_len(*m), 3u);
  EXPECT_EQ(s.snapshot_indicators().bytes_appended, appended);
  const auto f0 = s.snapshot_indicators();
  const Completion c = s.read(0, key(3), buf);
  EXPECT_TRUE(c.synchronous);
  EXPECT_EQ(s.snapshot_indicators().file_reads, f0.file_reads);
}

TEST_F(ReferenceTest, InlineReadsCountedAgainstDriverLog) {
  auto s = open();
  std::uint64_t issued = 0;
  for (std::uint64_t k = 0; k < 100; ++k) s.upsert(0, key(k), value(k, k, k % 8));
  const auto c0 = s.snapshot_indicators();
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(s.read(0, key(rng() % 100), buf).status, Status::found);
    ++issued;
  }
  const auto d = s.snapshot_indicators().delta_since(c0);
  EXPECT_EQ(d.inline_hits, issued);
  EXPECT_EQ(d.file_reads, 0u);
  EXPECT_EQ(d.ring_hits, 0u);
}

TEST_F(ReferenceTest, EqualSizeAppendsStrictShrinkReusesOffset) {
  auto s = open();
  s.upsert(0, key(1), value(1, 0, 100));
  const auto m1 = *s.meta_of(key(1));
  s.upsert(0, key(1), value(1, 1, 100));
  const auto m2 = *s.meta_of(key(1));
  EXPECT_NE(meta::log_off(m1), meta::log_off(m2));
  s.upsert(0, key(1), value(1, 2, 50));
  const auto m3 = *s.meta_of(key(1));
  EXPECT_EQ(meta::log_off(m3), meta::log_off(m2));
  EXPECT_EQ(meta::log_size(m3), 50u);
  const Completion c = s.read(0, key(1), buf);
  EXPECT_TRUE(fabric.validate(c.value, key(1)).ok());
  EXPECT_EQ(c.value.size(), 50u);
}

TEST_F(ReferenceTest, ShrinkFromAnotherThreadAppends) {
  auto s = open(2);
  s.upsert(0, key(1), value(1, 0, 100, 0));
  const auto m1 = *s.meta_of(key(1));
  s.upsert(1, key(1), value(1, 0, 50, 1));
  const auto m2 = *s.meta_of(key(1));
  EXPECT_EQ(meta::log_tid(m2), 1u);
  EXPECT_NE(m1, m2);
}

TEST_F(ReferenceTest, OverwrittenRingRecordIsServedFromFile) {
  auto s = open(1, 4096, kMinRingOverride);
  s.upsert(0, key(0), value(0, 0, 1000));
  std::uint64_t seq = 1;
  while (s.cursors(0).t < 2 * s.ring_bytes()) {
    const std::uint64_t k = 1 + seq % 1000;
    s.upsert(0, key(k), value(k, seq, 1000));
    ++seq;
  }
  const auto c0 = s.snapshot_indicators();
  const Completion c = s.read(0, key(0), buf);
  ASSERT_EQ(c.status, Status::found);
  EXPECT_FALSE(c.synchronous);
  EXPECT_TRUE(fabric.validate(c.value, key(0)).ok());
  const auto d = s.snapshot_indicators().delta_since(c0);
  EXPECT_EQ(d.file_reads, 1u);
  EXPECT_EQ(d.ring_hits, 0u);
}

TEST_F(ReferenceTest, RingHitsAreSynchronous) {
  auto s = open();
  s.upsert(0, key(2), value(2, 0, 500));
  const auto c0 = s.snapshot_indicators();
  const Completion c = s.read(0, key(2), buf);
  EXPECT_TRUE(c.synchronous);
  EXPECT_EQ(s.snapshot_indicators().delta_since(c0).ring_hits, 1u);
}

TEST_F(ReferenceTest, FlushAndDrop) {
  auto s = open(1, 4096, kMinRingOverride);
  for (std::uint64_t k = 0; k < 20; ++k) s.upsert(0, key(k), value(k, k, 200));
  const RingCursors before = s.cursors(0);
  EXPECT_FALSE(s.flush_and_drop(0, before.s - before.f + 1));  // below chunk: no-op
  EXPECT_EQ(s.cursors(0).f, before.f);
  EXPECT_TRUE(s.flush_and_drop(0, 1));
  const RingCursors after = s.cursors(0);
  EXPECT_EQ(after.f, after.s);
  s.simulate_crash(CrashMode::no_checkpoint);
  s.recover();
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Completion c = s.read(0, key(k), buf);
    ASSERT_EQ(c.status, Status::found) << k;
    EXPECT_TRUE(fabric.validate(c.value, key(k)).ok());
  }
}

TEST_F(ReferenceTest, CursorOrderingHolds) {
  auto s = open(1, 4096, kMinRingOverride);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20'000; ++i) {
    const std::uint64_t k = rng() % 4000;
    s.upsert(0, key(k), value(k, static_cast<std::uint64_t>(i), rng() % 600));
    const RingCursors c = s.cursors(0);
    ASSERT_LE(c.f, c.s);
    ASSERT_LE(c.s, c.t);
    ASSERT_LE(c.s - c.f, s.ring_bytes());
  }
}

TEST_F(ReferenceTest, BudgetGaugeStaysWithinBound) {
  ScratchDir d(scratch_root(), "budget");
  StoreConfig sc = store_config(d.path(), 1, 10'000, 1ULL << 20);
  sc.effective_budget = 64ULL << 20;
  ReferenceStore s(sc);
  const std::uint64_t bound = s.footprint_bytes();
  EXPECT_LE(bound, sc.effective_budget);
  std::mt19937_64 rng(3);
  std::uint64_t seq = 0;
  while (s.cursors(0).t < 10 * s.ring_bytes()) {
    const std::uint64_t k = rng() % 10'000;
    s.upsert(0, key(k), value(k, seq++, 4000));
    ASSERT_LE(s.snapshot_indicators().budget_bytes_in_use, sc.effective_budget);
  }
  EXPECT_EQ(s.snapshot_indicators().budget_bytes_in_use, bound);
}

TEST_F(ReferenceTest, OpenFailsWhenTableExceedsBudget) {
  ScratchDir d(scratch_root(), "budget");
  StoreConfig sc = store_config(d.path(), 1, 1'000'000);
  sc.effective_budget = 16ULL << 20;
  EXPECT_THROW(ReferenceStore{sc}, CapacityError);
}

TEST_F(ReferenceTest, CheckpointThenMoreWritesKeepsPrefix) {
  auto s = open(1, 12'000);
  for (std::uint64_t k = 0; k < 10'000; ++k) s.upsert(0, key(k), value(k, k, 100));
  s.checkpoint();
  for (std::uint64_t i = 0; i < 1000; ++i) s.upsert(0, key(10'000 + i), value(10'000 + i, 10'000 + i, 100));
  s.simulate_crash(CrashMode::fuzzy_checkpoint);
  s.recover();
  for (std::uint64_t k = 0; k < 10'000; ++k) {
    const Completion c = s.read(0, key(k), buf);
    ASSERT_EQ(c.status, Status::found) << k;
    ASSERT_TRUE(fabric.validate(c.value, key(k)).ok());
  }
  bool gap = false;
  std::uint64_t survivors = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const bool found = s.read(0, key(10'000 + i), buf).status == Status::found;
    if (found && gap) ADD_FAILURE() << "write " << i << " survived after a lost write";
    if (!found) gap = true;
    survivors += found;
  }
  RecordProperty("post_checkpoint_survivors", static_cast<int>(survivors));
}

TEST_F(ReferenceTest, NoCheckpointCrashIsPrefixConsistent) {
  auto s = open(1, 8192, kMinRingOverride);
  std::vector<std::uint64_t> order;
  for (std::uint64_t i = 0; i < 3000; ++i) {
    s.upsert(0, key(i), value(i, i, 150));
    order.push_back(i);
  }
  s.simulate_crash(CrashMode::no_checkpoint);
  s.recover();
  bool gap = false;
  std::uint64_t kept = 0;
  for (auto i : order) {
    const Completion c = s.read(0, key(i), buf);
    const bool found = c.status == Status::found;
    if (found) {
      EXPECT_FALSE(gap) << "seq " << i << " survived a lost predecessor";
      EXPECT_TRUE(fabric.validate(c.value, key(i)).ok());
      ++kept;
    } else {
      gap = true;
    }
  }
  EXPECT_GT(kept, 0u);  // at least one full flush happened
}

TEST_F(ReferenceTest, RingAndFileAgreeUnderSelfCheck) {
  StoreConfig sc = store_config(dir.path(), 1, 4096, kMinRingOverride);
  sc.self_check = true;
  ReferenceStore s(sc);
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20'000; ++i) {
    const std::uint64_t k = rng() % 2000;
    if (rng() % 3) {
      s.upsert(0, key(k), value(k, static_cast<std::uint64_t>(i), 8 + rng() % 400));
    } else if (s.read(0, key(k), buf).status == Status::found) {
      ASSERT_TRUE(fabric.validate(buf.view(), key(k)).ok());
    }
    if (i % 1000 == 0) s.flush_and_drop(0, 1);
  }
}

TEST_F(ReferenceTest, OversizedValueIsCapacityError) {
  auto s = open();
  Bytes big(70'000);
  EXPECT_THROW(s.upsert(0, key(1), big), CapacityError);
}

// ---- meta word --------------------------------------------------------------

TEST(MetaWord, EncodingRoundTrips) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100'000; ++i) {
    const auto tid = static_cast<std::uint32_t>(rng() % 64);
    const std::uint64_t off = rng() & meta::kMaxOffset;
    const auto size = static_cast<std::uint16_t>(1 + rng() % 65535);
    const std::uint64_t m = meta::make_log_ptr(tid, off, size);
    ASSERT_EQ(meta::tag(m), meta::Tag::log_ptr);
    ASSERT_EQ(meta::log_tid(m), tid);
    ASSERT_EQ(meta::log_off(m), off);
    ASSERT_EQ(meta::log_size(m), size);
    std::array<std::byte, 7> v{};
    const std::size_t len = rng() % 8;
    for (std::size_t j = 0; j < len; ++j) v[j] = std::byte(rng());
    const std::uint64_t im = meta::make_inline(ByteView(v.data(), len));
    ASSERT_EQ(meta::tag(im), meta::Tag::inline_value);
    ASSERT_EQ(meta::inline_len(im), len);
    std::array<std::byte, 7> out{};
    meta::inline_copy(im, out.data());
    ASSERT_TRUE(std::equal(out.begin(), out.begin() + static_cast<long>(len), v.begin()));
  }
  EXPECT_EQ(meta::tag(meta::kEmpty), meta::Tag::empty);
  EXPECT_EQ(meta::tag(meta::kTombstone), meta::Tag::tombstone);
}

// Every legal transition, driven through the public operations, leaves a
// different 64-bit word behind.
TEST(MetaWord, EveryLegalTransitionChangesTheWord) {
  ScratchDir dir(scratch_root(), "meta");
  const ValueFabric f(RunSecret::fresh());
  for (const auto& [name, before, after] : run_meta_transitions(dir.path(), f, 50, 5))
    ASSERT_NE(before, after) << name;
}
