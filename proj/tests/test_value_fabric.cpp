#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>
#include <unordered_set>

#include "support.hpp"

using namespace kvbench;
using namespace kvbench::testing;

namespace {

double byte_entropy(const std::vector<std::uint64_t>& hist, std::uint64_t total) {
  double h = 0;
  for (auto c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace

TEST(Scramble, RoundTripAndInjective) {
  const ValueFabric f(RunSecret::fresh());
  EXPECT_EQ(f.unscramble(f.scramble(0)), 0u);
  std::unordered_set<Key> seen;
  for (Key k = 0; k < 10'000; ++k) {
    const Key s = f.scramble(k);
    ASSERT_EQ(f.unscramble(s), k);
    seen.insert(s);
  }
  EXPECT_EQ(seen.size(), 10'000u);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100'000; ++i) {
    const Key k = rng();
    ASSERT_EQ(f.unscramble(f.scramble(k)), k);
    ASSERT_EQ(f.scramble(f.unscramble(k)), k);
  }
}

TEST(Scramble, DependsOnSecret) {
  const ValueFabric a(RunSecret::from_seed(1));
  const ValueFabric b(RunSecret::from_seed(2));
  int differing = 0;
  for (Key k = 0; k < 1000; ++k) differing += a.scramble(k) != b.scramble(k);
  EXPECT_GE(differing, 999);
  EXPECT_NE(a.scramble(42), b.scramble(42));
}

TEST(Scramble, DestroysKeyDensity) {
  // Consecutive logical keys must not land in consecutive low bits.
  const ValueFabric f(RunSecret::fresh());
  std::unordered_set<std::uint64_t> low;
  for (Key k = 0; k < 4096; ++k) low.insert(f.scramble(k) & 4095);
  EXPECT_LT(low.size(), 3000u);  // a bijection on the low bits would give 4096
}

TEST(Envelope, RoundTripRandomInputs) {
  const ValueFabric f(RunSecret::fresh());
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    const Key k = rng();
    const auto t = static_cast<ThreadId>(rng() % 64);
    const std::uint64_t s = rng();
    const auto len = static_cast<std::size_t>(i < 300 ? i : rng() % 65536);
    const Bytes v = f.make_envelope(k, t, s, len);
    ASSERT_EQ(v.size(), len);
    ASSERT_TRUE(f.validate(v, f.scramble(k)).ok()) << "len " << len;
    ASSERT_EQ(v, f.make_envelope(k, t, s, len));
  }
}

TEST(Envelope, HeaderFieldsDecode) {
  const ValueFabric f(RunSecret::fresh());
  const Bytes v = f.make_envelope(9, 7, 123456789, 100);
  const auto h = ValueFabric::decode_header(v);
  EXPECT_EQ(h.key, f.scramble(9));
  EXPECT_EQ(h.thread_id, 7);
  EXPECT_EQ(h.seq, 123456789u);
  EXPECT_EQ(h.payload_len, 100);
}

TEST(Envelope, EverySingleBitFlipIsRejected) {
  const ValueFabric f(RunSecret::fresh());
  const Key k = f.scramble(77);
  for (std::size_t len : {100u, 28u, 27u, 16u, 9u, 8u, 3u, 1u}) {
    const Bytes v = f.make_envelope(77, 3, 99, len);
    std::size_t rejected = 0;
    for (std::size_t bit = 0; bit < len * 8; ++bit) {
      Bytes w = v;
      w[bit / 8] ^= std::byte(1u << (bit % 8));
      rejected += !f.validate(w, k).ok();
    }
    EXPECT_EQ(rejected, len * 8) << "len " << len;
  }
}

TEST(Envelope, LengthLimit) {
  const ValueFabric f(RunSecret::fresh());
  EXPECT_THROW(f.make_envelope(1, 0, 0, 70'000), LengthError);
  EXPECT_NO_THROW(f.make_envelope(1, 0, 0, 65'535));
}

TEST(Envelope, WrongProbedKeyIsKeyMismatch) {
  const ValueFabric f(RunSecret::fresh());
  for (std::size_t len : {100u, 20u, 12u}) {
    const Bytes v = f.make_envelope(1, 0, 0, len);
    EXPECT_EQ(f.validate(v, f.scramble(2)).verdict, Verdict::key_mismatch) << len;
  }
}

TEST(Envelope, ShortValuesBindTheKey) {
  // Below 16 bytes the key is not fully stored; the checksum still binds it.
  const ValueFabric f(RunSecret::fresh());
  for (std::size_t len = 1; len < 16; ++len) {
    const Bytes v = f.make_envelope(1, 0, 0, len);
    EXPECT_FALSE(f.validate(v, f.scramble(2)).ok()) << len;
  }
}

TEST(Envelope, TruncationIsDetected) {
  const ValueFabric f(RunSecret::fresh());
  const Bytes v = f.make_envelope(4, 1, 1, 200);
  const Validation r = f.validate(ByteView(v).first(150), f.scramble(4));
  EXPECT_EQ(r.verdict, Verdict::length_mismatch);
  EXPECT_EQ(r.expected_len, 200u);
}

TEST(Envelope, SynthesizedValueWithoutFillKeyFails) {
  // A generator that knows the layout but not the secret.
  const RunSecret real = RunSecret::fresh();
  const ValueFabric f(real);
  RunSecret guess = real;
  guess.fill_key = RunSecret::fresh().fill_key;
  const ValueFabric impostor(guess);
  const Key k = f.scramble(5);
  const Bytes fake = impostor.make_envelope_for_key(k, 0, 0, 100);
  EXPECT_EQ(f.validate(fake, k).verdict, Verdict::checksum_mismatch);
}

TEST(Envelope, StoredPrefixPlusRegeneratedTailFails) {
  const RunSecret real = RunSecret::fresh();
  const ValueFabric f(real);
  RunSecret guess = real;
  guess.run_tag = RunSecret::fresh().run_tag;
  guess.fill_key = RunSecret::fresh().fill_key;
  const ValueFabric regen(guess);
  const Key k = f.scramble(6);
  const Bytes v = f.make_envelope_for_key(k, 2, 41, 100);
  Bytes mixed = regen.make_envelope_for_key(k, 2, 41, 100);
  std::copy(v.begin(), v.begin() + 16, mixed.begin());
  EXPECT_EQ(f.validate(mixed, k).verdict, Verdict::checksum_mismatch);
}

TEST(Envelope, FillIsIncompressible) {
  const ValueFabric f(RunSecret::fresh());
  std::vector<std::uint64_t> hist(256);
  std::uint64_t total = 0;
  std::uint64_t seq = 0;
  while (total < (1u << 20)) {
    const Bytes v = f.make_envelope(seq % 1000, 1, seq, 4096);
    ++seq;
    for (std::size_t i = kHeaderBytes; i < v.size() - kChecksumBytes; ++i) ++hist[static_cast<std::uint8_t>(v[i])];
    total += v.size() - kFullEnvelopeBytes;
  }
  EXPECT_GE(byte_entropy(hist, total), 7.9);
}

TEST(Envelope, DifferentSecretsGiveDifferentFill) {
  const ValueFabric a(RunSecret::fresh());
  const ValueFabric b(RunSecret::fresh());
  const Bytes va = a.make_envelope_for_key(1, 0, 0, 100);
  const Bytes vb = b.make_envelope_for_key(1, 0, 0, 100);
  EXPECT_NE(Bytes(va.begin() + kHeaderBytes, va.end()), Bytes(vb.begin() + kHeaderBytes, vb.end()));
}

TEST(Envelope, EmptyValueIsValid) {
  const ValueFabric f(RunSecret::fresh());
  EXPECT_TRUE(f.validate(ByteView{}, 12).ok());
  EXPECT_TRUE(f.make_envelope(1, 0, 0, 0).empty());
}
