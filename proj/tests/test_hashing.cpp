#include "llm4ng/hashing.hpp"

#include <gtest/gtest.h>

#include "llm4ng/rng.hpp"

namespace llm4ng {
namespace {

// Published SHA-1 vectors.
TEST(Sha1, KnownVectors) {
  EXPECT_EQ(sha1_hex(""), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
  EXPECT_EQ(sha1_hex("abc"), "a9993e364706816aba3e25717850c26c9cd0d89d");
  EXPECT_EQ(sha1_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq"),
            "84983e441c3bd26ebaae4aa1f95129e5e54670f1");
  std::string million(1000000, 'a');
  EXPECT_EQ(sha1_hex(million), "34aa973cd4c4daa4f61eeb2bdbad27316534016f");
}

TEST(Sha1, GitBlobHash) {
  // echo -n 'hello' | git hash-object --stdin
  EXPECT_EQ(git_blob_hash("hello"), "b6fc4c620b67d95f953a5c1c1230aaab5db5a1b0");
  EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Sha1, IncrementalMatchesOneShot) {
  Sha1 h;
  h.update("abc");
  h.update("def");
  EXPECT_EQ(h.hex_digest(), sha1_hex("abcdef"));
}

TEST(Hash64, SeedChangesValue) {
  EXPECT_EQ(hash64("graph", 1), hash64("graph", 1));
  EXPECT_NE(hash64("graph", 1), hash64("graph", 2));
  EXPECT_NE(hash64("graph", 1), hash64("graphs", 1));
}

TEST(Rng, DeterministicUnderSeed) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  Rng c(43);
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, BoundedIndexInRange) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(rng.next_index(13), 13u);
  }
  EXPECT_EQ(rng.next_index(1), 0u);
  EXPECT_EQ(rng.next_index(0), 0u);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng rng(3);
  std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto shuffled = v;
  rng.shuffle(shuffled);
  auto sorted = shuffled;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, v);
}

TEST(Rng, NormalMomentsRoughlyStandard) {
  Rng rng(11);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    sum += x;
    sum_sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sum_sq / n, 1.0, 0.05);
}

}  // namespace
}  // namespace llm4ng
