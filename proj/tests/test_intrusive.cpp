#include "gibscore/intrusive.hpp"
#include "gibscore/rng.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gibscore;

namespace {

// Memoized recursive edit distance, independent of the library's table.
std::size_t oracle_distance(const std::vector<int>& a, const std::vector<int>& b)
{
  std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
  std::function<long(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> long {
    if (i == 0) {
      return static_cast<long>(j);
    }
    if (j == 0) {
      return static_cast<long>(i);
    }
    auto& m = memo[i][j];
    if (m >= 0) {
      return m;
    }
    m = std::min({ d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1) });
    return m;
  };
  return static_cast<std::size_t>(d(a.size(), b.size()));
}

std::vector<int> random_seq(SplitMix64& rng, std::size_t max_len, std::uint64_t alphabet)
{
  std::vector<int> s(rng.below(max_len + 1));
  for (auto& x : s) {
    x = static_cast<int>(rng.below(alphabet));
  }
  return s;
}

} // namespace

TEST(Align, KittenSitting)
{
  const auto r = align("kitten", "sitting");
  EXPECT_EQ(r.distance(), 3u);
  EXPECT_EQ(r.substitutions, 2u);
  EXPECT_EQ(r.insertions, 1u);
  EXPECT_EQ(r.deletions, 0u);
}

TEST(Align, IdenticalAndDeletion)
{
  const std::vector<std::string> ref{ "a", "b", "c" };
  const auto same = align(ref, ref);
  EXPECT_EQ(same.distance(), 0u);
  EXPECT_EQ(same.error_rate, 0.0);
  EXPECT_EQ(same.hits, 3u);

  const auto r = align(ref, std::vector<std::string>{ "a", "c" });
  EXPECT_EQ(r.deletions, 1u);
  EXPECT_EQ(r.distance(), 1u);
  EXPECT_DOUBLE_EQ(r.error_rate, 1.0 / 3.0);
}

TEST(Align, EmptyReferenceIsFlagged)
{
  const auto r = align(std::vector<int>{}, std::vector<int>{ 1, 2 });
  EXPECT_FALSE(r.defined);
  EXPECT_EQ(r.reference_length, 0u);
  EXPECT_EQ(r.insertions, 2u);
  EXPECT_TRUE(std::isnan(r.error_rate));
}

TEST(Align, RateCanExceedOne)
{
  const auto r = align(std::vector<int>{ 1 }, std::vector<int>{ 2, 3, 4, 5 });
  EXPECT_EQ(r.distance(), 4u);
  EXPECT_DOUBLE_EQ(r.error_rate, 4.0);
}

TEST(Align, MatchesOracleAndInvariants)
{
  SplitMix64 rng(21);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_seq(rng, 8, 4);
    const auto b = random_seq(rng, 8, 4);
    const auto r = align(a, b);
    EXPECT_EQ(r.distance(), oracle_distance(a, b));
    EXPECT_EQ(r.hits + r.substitutions + r.deletions, a.size());
    EXPECT_EQ(r.hits + r.substitutions + r.insertions, b.size());
    const auto swapped = align(b, a);
    EXPECT_EQ(swapped.distance(), r.distance());
  }
}

TEST(Align, BacktracePrefersSubstitutionThenDeletion)
{
  // [a b] vs [c]: substitute a->c and delete b, or delete a and substitute b->c
  const auto r = align(std::vector<char>{ 'a', 'b' }, std::vector<char>{ 'c' });
  EXPECT_EQ(r.substitutions, 1u);
  EXPECT_EQ(r.deletions, 1u);
  EXPECT_EQ(r.insertions, 0u);
}

TEST(CorpusRate, PoolsInsteadOfAveraging)
{
  using P = std::pair<std::vector<int>, std::vector<int>>;
  const std::vector<P> pairs{ { { 1, 2 }, { 1, 3 } }, { { 4, 5 }, { 4, 5 } } };
  const auto r = corpus_error_rate(pairs);
  EXPECT_DOUBLE_EQ(r.pooled, 0.25);
  ASSERT_EQ(r.per_pair.size(), 2u);
  EXPECT_DOUBLE_EQ(r.per_pair[0].error_rate, 0.5);

  const std::vector<P> same{ { { 1 }, { 1 } }, { { 2, 3 }, { 2, 3 } } };
  EXPECT_EQ(corpus_error_rate(same).pooled, 0.0);

  const std::vector<P> empty{ { {}, { 1 } } };
  EXPECT_THROW(corpus_error_rate(empty), UndefinedError);
}

TEST(CorpusRate, RandomPairsMatchManualPooling)
{
  SplitMix64 rng(5);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;
  std::size_t errors = 0, total = 0;
  for (int i = 0; i < 40; ++i) {
    auto a = random_seq(rng, 6, 3);
    a.push_back(0);
    auto b = random_seq(rng, 6, 3);
    errors += oracle_distance(a, b);
    total += a.size();
    pairs.emplace_back(a, b);
  }
  EXPECT_DOUBLE_EQ(corpus_error_rate(pairs).pooled, static_cast<double>(errors) / static_cast<double>(total));
}

TEST(Transcripts, NormalizationAndParsing)
{
  EXPECT_EQ(normalize_words("  Hello,   WORLD! \"Quoted\"; ok?"),
            (std::vector<std::string>{ "hello", "world", "quoted", "ok" }));
  EXPECT_EQ(split_symbols("sil  AH0 b\tk"), (std::vector<std::string>{ "sil", "AH0", "b", "k" }));

  gibscore::test::TempDir dir;
  gibscore::test::spit(dir / "t.txt", "u1 the cat\r\n\nu2\nu3\tsat down\n");
  const auto t = read_transcripts((dir / "t.txt").string());
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t[0], (std::pair<std::string, std::string>{ "u1", "the cat" }));
  EXPECT_EQ(t[1].second, "");
  EXPECT_EQ(t[2].second, "sat down");

  gibscore::test::spit(dir / "dup.txt", "a x\na y\n");
  EXPECT_THROW(read_transcripts((dir / "dup.txt").string()), ValidationError);
}
