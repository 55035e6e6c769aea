#pragma once

// Synthetic token grammar and feature renderer used by the bundled fixture,
// the acceptance suite and the `make-fixture` command.
//
// The grammar is a first-order Markov chain over V symbols: sequences start
// at a uniformly drawn symbol and every symbol s continues to one of two
// fixed successors (never s itself) with probabilities 0.75 / 0.25. Lengths
// are uniform in [min_length, max_length].

#include "gibscore/interchange.hpp"
#include "gibscore/manifest.hpp"
#include "gibscore/report.hpp"
#include "gibscore/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gibscore::synthetic {

class Grammar
{
public:
  Grammar(std::uint32_t vocab, std::uint64_t seed, std::size_t min_length = 10, std::size_t max_length = 24)
    : vocab_(vocab)
    , min_length_(min_length)
    , max_length_(max_length)
  {
    if (vocab < 3) {
      throw UsageError("synthetic grammar needs at least 3 symbols");
    }
    SplitMix64 rng(seed);
    successors_.resize(vocab);
    for (Token s = 0; s < vocab; ++s) {
      Token a, b;
      do {
        a = static_cast<Token>(rng.below(vocab));
      } while (a == s);
      do {
        b = static_cast<Token>(rng.below(vocab));
      } while (b == s || b == a);
      successors_[s] = { a, b };
    }
  }

  std::uint32_t vocab_size() const noexcept { return vocab_; }
  const std::array<Token, 2>& successors(Token s) const { return successors_[s]; }
  static constexpr double kPrimaryProbability = 0.75;

  TokenSequence sample(SplitMix64& rng) const
  {
    const std::size_t length = min_length_ + rng.below(max_length_ - min_length_ + 1);
    TokenSequence seq;
    seq.vocab_size = vocab_;
    seq.tokens.reserve(length);
    Token current = static_cast<Token>(rng.below(vocab_));
    seq.tokens.push_back(current);
    while (seq.tokens.size() < length) {
      current = rng.uniform() < kPrimaryProbability ? successors_[current][0] : successors_[current][1];
      seq.tokens.push_back(current);
    }
    return seq;
  }

  std::vector<TokenSequence> sample(std::size_t count, SplitMix64& rng) const
  {
    std::vector<TokenSequence> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(sample(rng));
    }
    return out;
  }

private:
  std::uint32_t vocab_;
  std::size_t min_length_;
  std::size_t max_length_;
  std::vector<std::array<Token, 2>> successors_;
};

//! Same tokens in a random order ("gibberish" counterpart).
inline TokenSequence shuffled(const TokenSequence& seq, SplitMix64& rng)
{
  TokenSequence out = seq;
  out.deduplicated = false;
  rng.shuffle(out.tokens);
  return out;
}

//! Replaces exactly round(rate * T) distinct positions with a different,
//! uniformly drawn symbol.
inline TokenSequence with_symbol_noise(const TokenSequence& seq, double rate, SplitMix64& rng)
{
  TokenSequence out = seq;
  out.deduplicated = false;
  const std::size_t T = seq.tokens.size();
  const auto hits = static_cast<std::size_t>(std::lround(rate * static_cast<double>(T)));
  std::vector<std::size_t> positions(T);
  for (std::size_t i = 0; i < T; ++i) {
    positions[i] = i;
  }
  rng.shuffle(positions);
  for (std::size_t k = 0; k < std::min(hits, T); ++k) {
    auto& tok = out.tokens[positions[k]];
    Token replacement;
    do {
      replacement = static_cast<Token>(rng.below(seq.vocab_size));
    } while (replacement == tok);
    tok = replacement;
  }
  return out;
}

//! Renders tokens as noisy feature frames: each token holds for 1 to 3 frames
//! drawn from N(prototype[token], noise_sd^2 I).
class FeatureRenderer
{
public:
  FeatureRenderer(std::uint32_t vocab, std::uint32_t dim, std::uint64_t seed,
                  double prototype_scale = 4.0, double noise_sd = 0.3)
    : vocab_(vocab)
    , dim_(dim)
    , noise_sd_(noise_sd)
  {
    SplitMix64 rng(seed);
    prototypes_.resize(static_cast<std::size_t>(vocab) * dim);
    for (auto& v : prototypes_) {
      v = prototype_scale * rng.normal();
    }
  }

  FeatureMatrix render(const TokenSequence& seq, SplitMix64& rng) const
  {
    std::vector<float> values;
    std::uint64_t frames = 0;
    for (Token t : seq.tokens) {
      const std::size_t hold = 1 + rng.below(3);
      for (std::size_t h = 0; h < hold; ++h, ++frames) {
        for (std::uint32_t j = 0; j < dim_; ++j) {
          values.push_back(static_cast<float>(prototypes_[t * dim_ + j] + noise_sd_ * rng.normal()));
        }
      }
    }
    return FeatureMatrix(frames, dim_, std::move(values));
  }

private:
  std::uint32_t vocab_;
  std::uint32_t dim_;
  double noise_sd_;
  std::vector<double> prototypes_;
};

struct FixtureOptions
{
  std::uint64_t seed = 2025;
  std::uint32_t vocab = 20;
  std::uint32_t dim = 8;
  std::size_t train_count = 300;
  std::size_t clean_count = 60;     //!< eval entries, noise rates cycling 0 / 0.1 / 0.2
  std::size_t gibberish_count = 60; //!< eval entries, shuffled
};

//! Writes a feature-level fixture:
//!   train/NNNN.gibf + train.jsonl    (condition "clean")
//!   eval/NNNN.gibf  + eval.jsonl     (conditions "clean" and "gibberish";
//!                                     reference_metric = fraction of
//!                                     positions altered: noise rate, or 1
//!                                     for shuffled sequences)
//!   pipeline.json                    (run configuration for the above)
inline void write_fixture(const std::filesystem::path& dir, const FixtureOptions& opt = {})
{
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "eval");
  const Grammar grammar(opt.vocab, opt.seed);
  const FeatureRenderer renderer(opt.vocab, opt.dim, opt.seed + 1);
  SplitMix64 rng(opt.seed + 2);

  auto id_of = [](const char* prefix, std::size_t i) {
    std::string n = std::to_string(i);
    return std::string(prefix) + std::string(4 - std::min<std::size_t>(4, n.size()), '0') + n;
  };

  Manifest train;
  for (std::size_t i = 0; i < opt.train_count; ++i) {
    const auto id = id_of("train", i);
    const auto path = dir / "train" / (id + ".gibf");
    write_features(renderer.render(grammar.sample(rng), rng), path);
    train.entries.push_back({ id, "clean", path, PayloadKind::features, std::nullopt, std::nullopt, {} });
  }
  write_manifest(train, dir / "train.jsonl");

  Manifest eval;
  static constexpr double rates[] = { 0.0, 0.1, 0.2 };
  for (std::size_t i = 0; i < opt.clean_count; ++i) {
    const auto id = id_of("clean", i);
    const double rate = rates[i % 3];
    const auto path = dir / "eval" / (id + ".gibf");
    write_features(renderer.render(with_symbol_noise(grammar.sample(rng), rate, rng), rng), path);
    eval.entries.push_back({ id, "clean", path, PayloadKind::features, rate, std::nullopt, {} });
  }
  for (std::size_t i = 0; i < opt.gibberish_count; ++i) {
    const auto id = id_of("gibberish", i);
    const auto path = dir / "eval" / (id + ".gibf");
    write_features(renderer.render(shuffled(grammar.sample(rng), rng), rng), path);
    eval.entries.push_back({ id, "gibberish", path, PayloadKind::features, 1.0, std::nullopt, {} });
  }
  write_manifest(eval, dir / "eval.jsonl");

  nlohmann::json cfg = {
    { "seed", opt.seed },
    { "paths", { { "workdir", "work" }, { "train_manifest", "train.jsonl" }, { "eval_manifest", "eval.jsonl" } } },
    { "tokenizer", { { "k", opt.vocab }, { "max_iter", 100 }, { "tol", 1e-6 } } },
    { "ulm", { { "backend", "ngram" }, { "order", 3 }, { "smoothing_k", 0.1 } } },
    { "scoring", { { "dedup", true } } },
    { "stats", { { "bins", 20 }, { "bandwidth", nullptr } } },
  };
  save_text(cfg.dump(2) + "\n", dir / "pipeline.json");
}

} // namespace gibscore::synthetic
