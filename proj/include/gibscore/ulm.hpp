#pragma once

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"
#include "gibscore/ngram.hpp"
#include "gibscore/recurrent.hpp"

#include <cmath>
#include <concepts>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace gibscore {

namespace detail {

struct DistributionSink
{
  void operator()(std::size_t, std::span<const double>) const {}
};

} // namespace detail

//! An autoregressive model over tokens [0, V) with a virtual BOS start.
//!
//! next_token_distribution(prefix, t) is p(. | prefix[0..t)); for_each_
//! distribution(seq, sink) calls sink(t, p(. | seq[0..t))) for every t and
//! must agree with it.
template<typename M>
concept UnitLanguageModel =
  requires(const M& m, std::span<const Token> seq, std::size_t step, detail::DistributionSink sink) {
    { m.vocab_size() } -> std::convertible_to<std::uint32_t>;
    { m.next_token_distribution(seq, step) } -> std::same_as<std::vector<double>>;
    m.for_each_distribution(seq, sink);
  };

//! Pass-through backend over a LogitsRecord. Distributions come from the
//! stored rows: exponentiated as stored when the record is flagged normalized,
//! log-softmax normalized (in double) otherwise. A row whose entries are all
//! -inf yields an all-zero vector.
class ExternalModel
{
public:
  explicit ExternalModel(LogitsRecord record)
    : record_(std::move(record))
  {
    validate(record_);
  }

  std::uint32_t vocab_size() const noexcept { return record_.vocab_size; }
  std::uint64_t step_count() const noexcept { return record_.step_count; }
  const LogitsRecord& record() const noexcept { return record_; }

  //! Natural-log probabilities of row `step`.
  std::vector<double> log_distribution(std::size_t step) const
  {
    if (step >= record_.step_count) {
      throw ValidationError("step " + std::to_string(step) + " out of range for a record of " +
                            std::to_string(record_.step_count) + " steps");
    }
    const auto row = record_.row(step);
    std::vector<double> lp(row.begin(), row.end());
    if (record_.normalized) {
      return lp;
    }
    double m = -std::numeric_limits<double>::infinity();
    for (double v : lp) {
      m = std::max(m, v);
    }
    if (m == -std::numeric_limits<double>::infinity()) {
      return lp;
    }
    double s = 0.0;
    for (double v : lp) {
      s += std::exp(v - m);
    }
    const double lse = m + std::log(s);
    for (double& v : lp) {
      v -= lse;
    }
    return lp;
  }

  //! The prefix is implied by the record's observed tokens and is ignored.
  std::vector<double> next_token_distribution(std::span<const Token>, std::size_t step) const
  {
    auto p = log_distribution(step);
    for (double& v : p) {
      v = std::exp(v);
    }
    return p;
  }

  template<typename Sink>
  void for_each_distribution(std::span<const Token> sequence, Sink&& sink) const
  {
    if (sequence.size() > record_.step_count) {
      throw ValidationError("sequence of length " + std::to_string(sequence.size()) +
                            " is longer than the logits record (" +
                            std::to_string(record_.step_count) + " steps)");
    }
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      const auto p = next_token_distribution(sequence, t);
      sink(t, std::span<const double>(p));
    }
  }

  //! Observed tokens as a scoreable sequence.
  TokenSequence observed_sequence() const
  {
    return TokenSequence{ record_.vocab_size, record_.observed, false };
  }

private:
  LogitsRecord record_;
};

static_assert(UnitLanguageModel<NGramModel>);
static_assert(UnitLanguageModel<RecurrentModel>);
static_assert(UnitLanguageModel<ExternalModel>);

//! Trained model loaded from a GIBN or GIBR file.
using AnyModel = std::variant<NGramModel, RecurrentModel>;

inline std::string backend_name(const AnyModel& model)
{
  return std::holds_alternative<NGramModel>(model) ? "ngram" : "rnn";
}

inline std::uint32_t vocab_size(const AnyModel& model)
{
  return std::visit([](const auto& m) { return m.vocab_size(); }, model);
}

inline AnyModel load_model(const std::filesystem::path& source)
{
  const auto magic = binary::peek_magic(source);
  if (magic == binary::magic_string(kNGramMagic)) {
    return read_ngram(source);
  }
  if (magic == binary::magic_string(kRecurrentMagic)) {
    return read_recurrent(source);
  }
  throw FormatError(source.string() + ": not a GIBN or GIBR model file");
}

inline void save_model(const AnyModel& model, const std::filesystem::path& destination)
{
  std::visit([&](const auto& m) { binary::save_bytes(m.encode(), destination); }, model);
}

} // namespace gibscore
