#include "gibscore/interchange.hpp"
#include "gibscore/manifest.hpp"
#include "gibscore/report.hpp"
#include "gibscore/rng.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

using namespace gibscore;
using gibscore::test::TempDir;

namespace {

std::vector<char> bytes(std::initializer_list<int> values)
{
  std::vector<char> out;
  for (int v : values) {
    out.push_back(static_cast<char>(v));
  }
  return out;
}

void append(std::vector<char>& out, std::initializer_list<int> values)
{
  for (int v : values) {
    out.push_back(static_cast<char>(v));
  }
}

} // namespace

TEST(Features, EmptyMatrixIsHeaderOnly)
{
  TempDir dir;
  FeatureMatrix m(0, 39);
  write_features(m, dir / "empty.gibf");
  EXPECT_EQ(std::filesystem::file_size(dir / "empty.gibf"), 4u + 4u + 8u + 4u);
  const auto back = read_features(dir / "empty.gibf");
  EXPECT_EQ(back.frame_count, 0u);
  EXPECT_EQ(back.dim, 39u);
  EXPECT_TRUE(back.values.empty());
}

TEST(Features, ExactByteLayout)
{
  FeatureMatrix m(1, 2, { 1.0f, -2.0f });
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000
  auto expected = bytes({ 'G', 'I', 'B', 'F', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0 });
  append(expected, { 0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0 });
  EXPECT_EQ(encode(m), expected);
}

TEST(Features, RoundTripIsBitIdentical)
{
  TempDir dir;
  FeatureMatrix m(2, 3, { 0.1f, -0.0f, 3.5e-38f, 1e30f, -7.25f, 2.0f });
  write_features(m, dir / "m.gibf");
  const auto back = read_features(dir / "m.gibf");
  ASSERT_EQ(back.values.size(), m.values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), m.values.data(), m.values.size() * sizeof(float)), 0);
  EXPECT_EQ(encode(back), encode(m));
}

TEST(Features, WrongMagicIsFormatError)
{
  TempDir dir;
  write_tokens({ 4, { 1, 2, 3 }, false }, dir / "t.gibt");
  EXPECT_THROW(read_features(dir / "t.gibt"), FormatError);
}

TEST(Features, TruncationIsCorruption)
{
  auto b = encode(FeatureMatrix(2, 2, { 1, 2, 3, 4 }));
  b.pop_back();
  EXPECT_THROW(decode_features(binary::Reader(b, "mem")), CorruptionError);
  b.resize(10);
  EXPECT_THROW(decode_features(binary::Reader(b, "mem")), CorruptionError);
}

TEST(Features, TrailingBytesAreCorruption)
{
  auto b = encode(FeatureMatrix(1, 1, { 1 }));
  b.push_back(0);
  EXPECT_THROW(decode_features(binary::Reader(b, "mem")), CorruptionError);
}

TEST(Features, NonFiniteValuesRejected)
{
  TempDir dir;
  FeatureMatrix m(1, 2, { 1.0f, std::numeric_limits<float>::quiet_NaN() });
  EXPECT_THROW(write_features(m, dir / "nan.gibf"), ValidationError);
  // a hand-built file with NaN is rejected on read as well
  auto b = encode(FeatureMatrix(1, 2, { 1.0f, 1.0f }));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(b.data() + b.size() - 4, &nan, 4);
  EXPECT_THROW(decode_features(binary::Reader(b, "mem")), ValidationError);
  m.values[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(validate(m), ValidationError);
}

TEST(Features, WrongVersionRejected)
{
  auto b = encode(FeatureMatrix(1, 1, { 1 }));
  b[4] = 2;
  EXPECT_THROW(decode_features(binary::Reader(b, "mem")), FormatError);
}

TEST(Tokens, ExactByteLayoutAndRoundTrip)
{
  TempDir dir;
  TokenSequence s{ 4, { 1, 2, 3 }, false };
  auto expected = bytes({ 'G', 'I', 'B', 'T', 1, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0, 4, 0, 0, 0, 0 });
  append(expected, { 1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0 });
  EXPECT_EQ(encode(s), expected);
  write_tokens(s, dir / "t.gibt");
  EXPECT_EQ(read_tokens(dir / "t.gibt"), s);
}

TEST(Tokens, EmptySequenceRoundTrips)
{
  TempDir dir;
  TokenSequence s{ 100, {}, false };
  write_tokens(s, dir / "e.gibt");
  EXPECT_EQ(read_tokens(dir / "e.gibt"), s);
}

TEST(Tokens, OutOfRangeTokenRejectedOnRead)
{
  auto b = encode(TokenSequence{ 4, { 1, 2, 3 }, false });
  b[b.size() - 4] = 4;
  EXPECT_THROW(decode_tokens(binary::Reader(b, "mem")), ValidationError);
}

TEST(Tokens, DedupFlagRequiresNoAdjacentRepeats)
{
  EXPECT_THROW(validate(TokenSequence{ 4, { 1, 1, 2 }, true }), ValidationError);
  EXPECT_NO_THROW(validate(TokenSequence{ 4, { 1, 2, 1 }, true }));
}

TEST(Tokens, FlagByteAboveOneRejected)
{
  auto b = encode(TokenSequence{ 4, { 1 }, false });
  b[20] = 2;
  EXPECT_THROW(decode_tokens(binary::Reader(b, "mem")), ValidationError);
}

TEST(Logits, ExactByteLayout)
{
  LogitsRecord r{ 1, 2, { 0.0f, -1.0f }, { 1 }, false };
  auto expected = bytes({ 'G', 'I', 'B', 'L', 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 2, 0, 0, 0, 0 });
  // -1.0f = 0xbf800000
  append(expected, { 0, 0, 0, 0, 0, 0, 0x80, 0xbf, 1, 0, 0, 0 });
  EXPECT_EQ(encode(r), expected);
}

TEST(Logits, NormalizedRowSummingToHalfRejected)
{
  const float half = static_cast<float>(std::log(0.25));
  LogitsRecord r{ 1, 2, { half, half }, { 0 }, true };
  EXPECT_THROW(validate(r), ValidationError);
  r.normalized = false;
  EXPECT_NO_THROW(validate(r));
}

TEST(Logits, RoundTripWithNegativeInfinity)
{
  TempDir dir;
  const float ninf = -std::numeric_limits<float>::infinity();
  LogitsRecord r{ 2, 2, { 0.0f, ninf, ninf, 0.0f }, { 0, 1 }, true };
  write_logits(r, dir / "l.gibl");
  const auto back = read_logits(dir / "l.gibl");
  EXPECT_EQ(back, r);
  EXPECT_EQ(encode(back), encode(r));
}

TEST(Logits, ObservedOutOfRangeAndNaNRejected)
{
  EXPECT_THROW(validate(LogitsRecord{ 1, 2, { 0.0f, 0.0f }, { 2 }, false }), ValidationError);
  EXPECT_THROW(validate(LogitsRecord{ 1, 2, { 0.0f, std::nanf("") }, { 0 }, false }), ValidationError);
}

TEST(Interchange, RandomPayloadsRoundTrip)
{
  SplitMix64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto frames = rng.below(6);
    const auto dim = static_cast<std::uint32_t>(1 + rng.below(5));
    FeatureMatrix m(frames, dim);
    for (auto& v : m.values) {
      v = static_cast<float>(rng.normal() * 100);
    }
    auto b = encode(m);
    EXPECT_EQ(encode(decode_features(binary::Reader(b, "mem"))), b);

    TokenSequence s{ static_cast<std::uint32_t>(1 + rng.below(50)), {}, false };
    for (std::size_t t = rng.below(20); t > 0; --t) {
      s.tokens.push_back(static_cast<Token>(rng.below(s.vocab_size)));
    }
    EXPECT_EQ(decode_tokens(binary::Reader(encode(s), "mem")), s);
  }
}

TEST(Manifest, ParsesEntriesVerbatim)
{
  TempDir dir;
  write_tokens({ 4, { 1 }, false }, dir / "a.gibt");
  std::istringstream in(
    R"({"id":"u1","condition":"noisy_-5dB","path":"a.gibt","kind":"tokens","reference_metric":0.42})"
    "\n\n# comment\n"
    R"({"id":"u2","condition":"clean","path":"b.gibt","kind":"tokens","metadata":{"layer":3}})"
    "\n");
  const auto m = parse_manifest(in, dir.path(), "m.jsonl");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.entries[0].id, "u1");
  EXPECT_EQ(m.entries[0].condition, "noisy_-5dB");
  ASSERT_TRUE(m.entries[0].reference_metric.has_value());
  EXPECT_EQ(*m.entries[0].reference_metric, 0.42);
  EXPECT_EQ(m.entries[0].payload_path, dir / "a.gibt");
  EXPECT_EQ(m.entries[1].metadata["layer"], 3);
  EXPECT_FALSE(m.entries[1].reference_metric.has_value());
}

TEST(Manifest, DuplicateIdErrorNamesTheId)
{
  std::istringstream in(R"({"id":"dup7","condition":"c","path":"a","kind":"tokens"})"
                        "\n"
                        R"({"id":"dup7","condition":"c","path":"b","kind":"tokens"})"
                        "\n");
  try {
    parse_manifest(in, ".", "m.jsonl");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dup7"), std::string::npos);
  }
}

TEST(Manifest, MissingPayloadReportedAtUseTime)
{
  TempDir dir;
  std::istringstream in(R"({"id":"x","condition":"c","path":"missing.gibt","kind":"tokens"})"
                        "\n");
  Manifest m;
  ASSERT_NO_THROW(m = parse_manifest(in, dir.path(), "m.jsonl"));
  EXPECT_THROW(check_payload_kind(m.entries[0]), Error);
}

TEST(Manifest, KindMustMatchMagic)
{
  TempDir dir;
  write_tokens({ 4, { 1 }, false }, dir / "a.gibt");
  ManifestEntry e{ "a", "c", dir / "a.gibt", PayloadKind::features, std::nullopt, std::nullopt, {} };
  EXPECT_THROW(check_payload_kind(e), ValidationError);
  e.kind = PayloadKind::tokens;
  EXPECT_NO_THROW(check_payload_kind(e));
}

TEST(Manifest, BadLinesRejected)
{
  std::istringstream not_json("{oops\n");
  EXPECT_THROW(parse_manifest(not_json, ".", "m"), FormatError);
  std::istringstream bad_kind(R"({"id":"x","condition":"c","path":"p","kind":"audio"})"
                              "\n");
  EXPECT_THROW(parse_manifest(bad_kind, ".", "m"), Error);
}

TEST(Manifest, WriteThenReadPreservesEntries)
{
  TempDir dir;
  std::filesystem::create_directories(dir / "data");
  write_tokens({ 4, { 1 }, false }, dir / "data" / "a.gibt");
  Manifest m;
  m.entries.push_back({ "a", "clean", dir / "data" / "a.gibt", PayloadKind::tokens, 0.5, std::nullopt, { { "k", 1 } } });
  write_manifest(m, dir / "sub" / "m.jsonl");
  const auto back = read_manifest(dir / "sub" / "m.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(std::filesystem::weakly_canonical(back.entries[0].payload_path),
            std::filesystem::weakly_canonical(dir / "data" / "a.gibt"));
  EXPECT_EQ(back.entries[0].reference_metric, 0.5);
  EXPECT_EQ(back.entries[0].metadata, m.entries[0].metadata);
}

TEST(Report, RoundTripAndSummaries)
{
  TempDir dir;
  ScoreReport r;
  r.header.model = "ngram";
  r.header.seed = 3;
  r.records = { { "a", "clean", 1.25, std::exp(1.25), 10, 0 },
                { "b", "gibberish", 2.5, std::exp(2.5), 8, 0 },
                { "c", "clean", 0.75, std::exp(0.75), 4, 1 } };
  r.skipped = { { "d", "clean", "bad file" } };
  write_report(r, dir / "report.jsonl");
  EXPECT_TRUE(std::filesystem::exists(dir / "report.tsv"));
  const auto back = read_report(dir / "report.jsonl");
  ASSERT_EQ(back.records.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.records[i].score, r.records[i].score);
    EXPECT_EQ(back.records[i].perplexity, r.records[i].perplexity);
    EXPECT_EQ(back.records[i].token_count, r.records[i].token_count);
  }
  ASSERT_EQ(back.skipped.size(), 1u);
  EXPECT_EQ(back.skipped[0].reason, "bad file");
  EXPECT_EQ(back.header.seed, std::optional<std::uint64_t>(3));

  const auto s = back.summary();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].condition, "clean");
  EXPECT_EQ(s[0].count + s[1].count, 3u);
  EXPECT_DOUBLE_EQ(s[0].mean, 1.0);
  EXPECT_DOUBLE_EQ(s[0].stddev, std::sqrt(0.125));
}

TEST(Report, InconsistentPerplexityRejected)
{
  std::istringstream in(
    R"({"type":"record","id":"a","condition":"c","score":1.0,"perplexity":3.0,"token_count":2,"clamped_steps":0})"
    "\n");
  EXPECT_THROW(parse_report(in), ValidationError);
}
