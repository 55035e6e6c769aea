#include "gibscore/scoring.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace gibscore;
using gibscore::test::TempDir;

namespace {

struct UniformModel
{
  std::uint32_t V;
  std::uint32_t vocab_size() const { return V; }
  std::vector<double> next_token_distribution(std::span<const Token>, std::size_t) const
  {
    return std::vector<double>(V, 1.0 / V);
  }
  template<typename Sink>
  void for_each_distribution(std::span<const Token> s, Sink&& sink) const
  {
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto p = next_token_distribution(s, t);
      sink(t, std::span<const double>(p));
    }
  }
};

// Puts all mass on the token that actually comes next in `truth`.
struct OracleModel
{
  std::uint32_t V;
  std::vector<Token> truth;
  std::uint32_t vocab_size() const { return V; }
  std::vector<double> next_token_distribution(std::span<const Token>, std::size_t t) const
  {
    std::vector<double> p(V, 0.0);
    p[truth[t]] = 1.0;
    return p;
  }
  template<typename Sink>
  void for_each_distribution(std::span<const Token> s, Sink&& sink) const
  {
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto p = next_token_distribution(s, t);
      sink(t, std::span<const double>(p));
    }
  }
};

static_assert(UnitLanguageModel<UniformModel>);
static_assert(UnitLanguageModel<OracleModel>);

} // namespace

TEST(Scoring, UniformModelGivesLogV)
{
  const UniformModel m{ 100 };
  const TokenSequence s{ 100, { 3, 99, 0, 42, 42, 7 }, false };
  EXPECT_NEAR(cross_entropy(m, s), std::log(100.0), 1e-12);
  EXPECT_NEAR(perplexity(m, s), 100.0, 100.0 * 1e-6);
}

TEST(Scoring, OracleModelGivesZero)
{
  const std::vector<Token> toks{ 1, 0, 2, 2 };
  const OracleModel m{ 3, toks };
  const auto s = score_sequence(m, { 3, toks, false });
  EXPECT_EQ(s.cross_entropy, 0.0);
  EXPECT_EQ(s.perplexity, 1.0);
  EXPECT_EQ(s.clamped_steps, 0u);
}

TEST(Scoring, BigramMatchesHandSum)
{
  const std::vector<TokenSequence> corpus{ { 2, { 0, 1, 0, 1 }, false }, { 2, { 1, 1, 0 }, false } };
  const auto m = train_ngram(corpus, 2, 0.5);
  // counts: BOS->{0:1,1:1}; 0->{1:2}; 1->{0:2,1:1}
  const double p0_bos = (1 + 0.5) / (2 + 1.0);
  const double p1_0 = (2 + 0.5) / (2 + 1.0);
  const double p0_1 = (2 + 0.5) / (3 + 1.0);
  const double expected = -(std::log(p0_bos) + std::log(p1_0) + std::log(p0_1) + std::log(p1_0)) / 4;
  EXPECT_NEAR(cross_entropy(m, { 2, { 0, 1, 0, 1 }, false }), expected, 1e-15);
}

TEST(Scoring, PerplexityIsExpOfScore)
{
  const std::vector<TokenSequence> corpus{ { 5, { 0, 1, 2, 3, 4, 0 }, false } };
  const auto m = train_ngram(corpus, 3, 0.2);
  const auto s = score_sequence(m, { 5, { 4, 3, 2 }, false });
  EXPECT_EQ(s.perplexity, std::exp(s.cross_entropy));
  EXPECT_GE(s.cross_entropy, 0.0);
}

TEST(Scoring, DeduplicatedSequenceUsesItsOwnLength)
{
  const UniformModel m{ 10 };
  const TokenSequence raw{ 10, { 1, 1, 1, 2, 2, 3 }, false };
  const auto d = deduplicate(raw);
  const auto a = score_sequence(m, raw);
  const auto b = score_sequence(m, d);
  EXPECT_EQ(a.token_count, 6u);
  EXPECT_EQ(b.token_count, 3u);
  EXPECT_NEAR(b.cross_entropy, std::log(10.0), 1e-12);

  // with a non-uniform model the per-token mean differs between T and T'
  const std::vector<TokenSequence> corpus{ raw };
  const auto ng = train_ngram(corpus, 2, 1.0);
  double sum = 0.0;
  for (std::size_t t = 0; t < d.size(); ++t) {
    sum -= std::log(ng.next_token_distribution(d.tokens, t)[d.tokens[t]]);
  }
  EXPECT_NEAR(cross_entropy(ng, d), sum / 3.0, 1e-15);
}

TEST(Scoring, NGramNeverClamps)
{
  const std::vector<TokenSequence> corpus{ { 50, { 0, 1, 2 }, false } };
  const auto m = train_ngram(corpus, 3, 1e-3);
  TokenSequence s{ 50, {}, false };
  for (Token t = 0; t < 50; ++t) {
    s.tokens.push_back(49 - t);
  }
  EXPECT_EQ(score_sequence(m, s).clamped_steps, 0u);
}

TEST(Scoring, Errors)
{
  const UniformModel m{ 4 };
  EXPECT_THROW(score_sequence(m, { 4, {}, false }), UndefinedError);
  EXPECT_THROW(score_sequence(m, { 5, { 1 }, false }), ValidationError);
  EXPECT_THROW(score_external({ 0, 3, {}, {}, false }), UndefinedError);
}

TEST(External, MatchesModelPathAndIdentities)
{
  const float l0 = 0.0f;
  LogitsRecord sure{ 2, 3, { -50.0f, l0, -50.0f, l0, -50.0f, -50.0f }, { 1, 0 }, false };
  EXPECT_NEAR(score_external(sure).cross_entropy, 0.0, 1e-12);

  LogitsRecord uniform{ 3, 50, std::vector<float>(150, 0.0f), { 1, 2, 49 }, false };
  EXPECT_NEAR(score_external(uniform).cross_entropy, std::log(50.0), 1e-12);

  SplitMix64 rng(3);
  LogitsRecord r{ 6, 7, {}, {}, false };
  for (int i = 0; i < 42; ++i) {
    r.log_probs.push_back(static_cast<float>(rng.normal() * 3));
  }
  for (int t = 0; t < 6; ++t) {
    r.observed.push_back(static_cast<Token>(rng.below(7)));
  }
  const ExternalModel model(r);
  EXPECT_EQ(score_external(r).cross_entropy, cross_entropy(model, model.observed_sequence()));
}

TEST(External, NegativeInfinityIsClampedAndCounted)
{
  const float ninf = -std::numeric_limits<float>::infinity();
  LogitsRecord r{ 2, 2, { 0.0f, ninf, 0.0f, ninf }, { 0, 1 }, true };
  const auto s = score_external(r);
  EXPECT_EQ(s.clamped_steps, 1u);
  EXPECT_NEAR(s.cross_entropy, -std::log(1e-12) / 2, 1e-12);
}

TEST(Corpus, ReportsRecordsSummariesAndSkips)
{
  TempDir dir;
  const std::vector<TokenSequence> corpus{ { 4, { 0, 1, 2, 3, 0, 1, 2, 3 }, false } };
  const AnyModel model = train_ngram(corpus, 2, 0.5);
  Manifest m;
  const std::vector<std::vector<Token>> seqs{ { 0, 1, 2 }, { 3, 2, 1 }, { 0, 0, 1, 1 } };
  const char* conds[] = { "clean", "gibberish", "clean" };
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto p = dir / ("u" + std::to_string(i) + ".gibt");
    write_tokens({ 4, seqs[i], false }, p);
    m.entries.push_back({ "u" + std::to_string(i), conds[i], p, PayloadKind::tokens, std::nullopt, std::nullopt, {} });
  }
  m.entries.push_back({ "missing", "clean", dir / "nope.gibt", PayloadKind::tokens, std::nullopt, std::nullopt, {} });

  const auto r1 = score_corpus(&model, m, { false, nullptr, 1 });
  const auto r4 = score_corpus(&model, m, { false, nullptr, 4 });
  ASSERT_EQ(r1.records.size(), 3u);
  ASSERT_EQ(r1.skipped.size(), 1u);
  EXPECT_EQ(r1.skipped[0].id, "missing");
  EXPECT_EQ(report_to_jsonl(r1), report_to_jsonl(r4));

  const auto summary = r1.summary();
  ASSERT_EQ(summary.size(), 2u);
  EXPECT_EQ(summary[0].count + summary[1].count, 3u);
  EXPECT_NEAR(summary[0].mean, (r1.records[0].score + r1.records[2].score) / 2, 1e-15);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r1.records[i].score, score_sequence(model, { 4, seqs[i], false }).cross_entropy);
  }

  const auto dedup = score_corpus(&model, m, { true, nullptr, 1 });
  EXPECT_EQ(dedup.records[2].token_count, 2u);
}

TEST(Corpus, NothingScoredIsAnError)
{
  TempDir dir;
  Manifest m;
  m.entries.push_back({ "a", "c", dir / "absent.gibt", PayloadKind::tokens, std::nullopt, std::nullopt, {} });
  EXPECT_THROW(score_corpus(nullptr, m), UndefinedError);
}

TEST(Corpus, ExternalModeScoresLogits)
{
  TempDir dir;
  write_logits({ 2, 4, std::vector<float>(8, 0.0f), { 0, 3 }, false }, dir / "a.gibl");
  write_tokens({ 4, { 1 }, false }, dir / "b.gibt");
  Manifest m;
  m.entries.push_back({ "a", "c", dir / "a.gibl", PayloadKind::logits, std::nullopt, std::nullopt, {} });
  m.entries.push_back({ "b", "c", dir / "b.gibt", PayloadKind::tokens, std::nullopt, std::nullopt, {} });
  const auto r = score_corpus(nullptr, m);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_NEAR(r.records[0].score, std::log(4.0), 1e-12);
  EXPECT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.header.model, "external");
}
