#pragma once

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

namespace gibscore {

inline constexpr binary::Magic kNGramMagic = binary::make_magic("GIBN");

//! Add-k smoothed n-gram model:
//!
//!   p(x | c) = (count(c, x) + k) / (count(c) + k V)
//!
//! Contexts are the n-1 preceding tokens; positions before the start of the
//! sequence hold the virtual BOS symbol, encoded as the value V.
class NGramModel
{
public:
  struct ContextCounts
  {
    std::vector<std::uint64_t> next; //!< V entries
    std::uint64_t total = 0;
  };
  using Context = std::vector<Token>;

  NGramModel() = default;
  NGramModel(std::uint32_t order, std::uint32_t vocab_size, double smoothing_k)
    : order_(order)
    , vocab_size_(vocab_size)
    , smoothing_k_(smoothing_k)
  {
    if (order < 1) {
      throw UsageError("n-gram order must be at least 1");
    }
    if (vocab_size == 0) {
      throw UsageError("vocab size must be positive");
    }
    if (!(smoothing_k > 0.0) || !std::isfinite(smoothing_k)) {
      throw UsageError("smoothing k must be a positive finite number");
    }
  }

  std::uint32_t order() const noexcept { return order_; }
  std::uint32_t vocab_size() const noexcept { return vocab_size_; }
  double smoothing_k() const noexcept { return smoothing_k_; }
  Token bos() const noexcept { return vocab_size_; }
  const std::map<Context, ContextCounts>& counts() const noexcept { return counts_; }

  //! The n-1 tokens preceding position `step` of `prefix`, BOS-padded.
  Context context_at(std::span<const Token> prefix, std::size_t step) const
  {
    Context ctx(order_ - 1, bos());
    const std::size_t width = order_ - 1;
    for (std::size_t j = 0; j < width; ++j) {
      // ctx[width - 1 - j] is the token j + 1 positions back
      if (step >= j + 1) {
        ctx[width - 1 - j] = prefix[step - j - 1];
      }
    }
    return ctx;
  }

  void observe(const Context& ctx, Token next)
  {
    auto& cc = counts_[ctx];
    if (cc.next.empty()) {
      cc.next.assign(vocab_size_, 0);
    }
    ++cc.next[next];
    ++cc.total;
  }

  double probability(const Context& ctx, Token next) const
  {
    const double denom_k = smoothing_k_ * vocab_size_;
    auto it = counts_.find(ctx);
    if (it == counts_.end()) {
      return smoothing_k_ / denom_k;
    }
    return (static_cast<double>(it->second.next[next]) + smoothing_k_) /
           (static_cast<double>(it->second.total) + denom_k);
  }

  std::vector<double> distribution(const Context& ctx) const
  {
    std::vector<double> p(vocab_size_);
    auto it = counts_.find(ctx);
    const double denom_k = smoothing_k_ * vocab_size_;
    if (it == counts_.end()) {
      std::fill(p.begin(), p.end(), 1.0 / vocab_size_);
      return p;
    }
    const double denom = static_cast<double>(it->second.total) + denom_k;
    for (std::uint32_t x = 0; x < vocab_size_; ++x) {
      p[x] = (static_cast<double>(it->second.next[x]) + smoothing_k_) / denom;
    }
    return p;
  }

  //! p(. | prefix[0 .. step)).
  std::vector<double> next_token_distribution(std::span<const Token> prefix, std::size_t step) const
  {
    if (step > prefix.size()) {
      throw ValidationError("step " + std::to_string(step) + " exceeds prefix length " +
                            std::to_string(prefix.size()));
    }
    return distribution(context_at(prefix, step));
  }

  //! Calls sink(t, p(. | x_<t)) for every position of `sequence`.
  template<typename Sink>
  void for_each_distribution(std::span<const Token> sequence, Sink&& sink) const
  {
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      const auto p = distribution(context_at(sequence, t));
      sink(t, std::span<const double>(p));
    }
  }

  // GIBN: "GIBN" | version u32 | order u32 | k f64 | vocab u32 |
  //       context_count u64 | per context: (order-1) u32 tokens, vocab u64 counts
  std::vector<char> encode() const
  {
    binary::Writer w;
    w.put_magic(kNGramMagic);
    w.put(kFormatVersion);
    w.put(order_);
    w.put(smoothing_k_);
    w.put(vocab_size_);
    w.put(static_cast<std::uint64_t>(counts_.size()));
    for (const auto& [ctx, cc] : counts_) {
      w.put_array(std::span<const Token>(ctx));
      w.put_array(std::span<const std::uint64_t>(cc.next));
    }
    return w.bytes();
  }

  static NGramModel decode(binary::Reader in)
  {
    in.expect_magic(kNGramMagic);
    in.expect_version(kFormatVersion);
    const auto order = in.get<std::uint32_t>();
    const auto k = in.get<double>();
    const auto vocab = in.get<std::uint32_t>();
    NGramModel model;
    try {
      model = NGramModel(order, vocab, k);
    } catch (const UsageError& e) {
      throw ValidationError(in.source() + ": " + e.what());
    }
    const auto contexts = in.get<std::uint64_t>();
    const std::size_t entry_bytes = (order - 1) * sizeof(Token) + std::size_t{ vocab } * 8;
    if (contexts > in.remaining() / entry_bytes) {
      throw CorruptionError(in.source() + ": truncated count table");
    }
    for (std::uint64_t c = 0; c < contexts; ++c) {
      auto ctx = in.get_array<Token>(order - 1);
      for (Token t : ctx) {
        if (t > vocab) {
          throw ValidationError(in.source() + ": context token out of range");
        }
      }
      ContextCounts cc;
      cc.next = in.get_array<std::uint64_t>(vocab);
      for (auto n : cc.next) {
        cc.total += n;
      }
      model.counts_.emplace(std::move(ctx), std::move(cc));
    }
    in.expect_end();
    return model;
  }

private:
  std::uint32_t order_ = 1;
  std::uint32_t vocab_size_ = 1;
  double smoothing_k_ = 1.0;
  std::map<Context, ContextCounts> counts_;
};

inline NGramModel train_ngram(std::span<const TokenSequence> corpus,
                              std::uint32_t order,
                              double smoothing_k)
{
  if (order < 1) {
    throw UsageError("n-gram order must be at least 1");
  }
  if (corpus.empty()) {
    throw InsufficientDataError("cannot train an n-gram model on an empty corpus");
  }
  const auto vocab = corpus.front().vocab_size;
  NGramModel model(order, vocab, smoothing_k);
  for (const auto& seq : corpus) {
    if (seq.vocab_size != vocab) {
      throw ValidationError("corpus mixes vocab sizes " + std::to_string(vocab) + " and " +
                            std::to_string(seq.vocab_size));
    }
    validate(seq);
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      model.observe(model.context_at(seq.tokens, t), seq.tokens[t]);
    }
  }
  return model;
}

inline void write_ngram(const NGramModel& model, const std::filesystem::path& destination)
{
  binary::save_bytes(model.encode(), destination);
}

inline NGramModel read_ngram(const std::filesystem::path& source)
{
  return NGramModel::decode(binary::Reader::open(source));
}

} // namespace gibscore
