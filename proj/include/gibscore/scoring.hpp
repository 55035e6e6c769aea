#pragma once

#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"
#include "gibscore/manifest.hpp"
#include "gibscore/parallel.hpp"
#include "gibscore/report.hpp"
#include "gibscore/tokenizer.hpp"
#include "gibscore/ulm.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace gibscore {

//! Probabilities below this are clamped before taking the log (and counted).
inline constexpr double kProbabilityFloor = 1e-12;

struct UtteranceScore
{
  std::string id;
  double cross_entropy = 0.0; //!< nats per token
  double perplexity = 1.0;
  std::uint64_t token_count = 0;
  std::uint64_t clamped_steps = 0;
};

//! Mean negative log-likelihood per token, -(1/T) sum_t log p(x_t | x_<t),
//! with each conditional taken from the model's next-token distribution.
template<UnitLanguageModel Model>
UtteranceScore score_sequence(const Model& model, const TokenSequence& sequence, std::string id = {})
{
  if (sequence.empty()) {
    throw UndefinedError("cannot score an empty token sequence");
  }
  if (sequence.vocab_size != model.vocab_size()) {
    throw ValidationError("sequence vocab size " + std::to_string(sequence.vocab_size) +
                          " does not match model vocab size " +
                          std::to_string(model.vocab_size()));
  }
  validate(sequence);

  static const double log_floor = std::log(kProbabilityFloor);
  double log_likelihood = 0.0;
  std::uint64_t clamped = 0;
  model.for_each_distribution(sequence.tokens, [&](std::size_t t, std::span<const double> p) {
    const double prob = p[sequence.tokens[t]];
    double lp;
    if (!(prob >= kProbabilityFloor)) {
      lp = log_floor;
      ++clamped;
    } else {
      lp = std::min(0.0, std::log(prob));
    }
    log_likelihood += lp;
  });

  UtteranceScore s;
  s.id = std::move(id);
  s.token_count = sequence.size();
  s.cross_entropy = -log_likelihood / static_cast<double>(sequence.size());
  s.perplexity = std::exp(s.cross_entropy);
  s.clamped_steps = clamped;
  return s;
}

template<UnitLanguageModel Model>
double cross_entropy(const Model& model, const TokenSequence& sequence)
{
  return score_sequence(model, sequence).cross_entropy;
}

template<UnitLanguageModel Model>
double perplexity(const Model& model, const TokenSequence& sequence)
{
  return score_sequence(model, sequence).perplexity;
}

inline UtteranceScore score_sequence(const AnyModel& model, const TokenSequence& sequence, std::string id = {})
{
  return std::visit([&](const auto& m) { return score_sequence(m, sequence, std::move(id)); }, model);
}

//! Scores a logits record at its own observed tokens.
inline UtteranceScore score_external(const LogitsRecord& record, std::string id = {})
{
  if (record.step_count == 0) {
    throw UndefinedError("cannot score a logits record with zero steps");
  }
  ExternalModel model(record);
  return score_sequence(model, model.observed_sequence(), std::move(id));
}

struct CorpusScoringOptions
{
  bool dedup = false;
  const Codebook* codebook = nullptr; //!< required for feature payloads
  unsigned jobs = 1;
};

//! Scores every manifest entry. `model` may be null, in which case only
//! logits payloads can be scored. Entries that fail are recorded as skipped
//! with the reason; the report keeps manifest order whatever `jobs` is.
inline ScoreReport score_corpus(const AnyModel* model,
                                const Manifest& manifest,
                                const CorpusScoringOptions& opt = {})
{
  struct Outcome
  {
    std::optional<UtteranceScore> score;
    std::string reason;
  };
  std::vector<Outcome> outcomes(manifest.entries.size());

  parallel_for(manifest.entries.size(), opt.jobs, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    try {
      check_payload_kind(e);
      if (e.kind == PayloadKind::logits) {
        outcomes[i].score = score_external(read_logits(e.payload_path), e.id);
        return;
      }
      if (!model) {
        throw DependencyError("entry of kind '" + to_string(e.kind) +
                              "' needs a trained model (external mode scores logits only)");
      }
      TokenSequence seq;
      if (e.kind == PayloadKind::features) {
        if (!opt.codebook) {
          throw DependencyError("feature payload needs a codebook");
        }
        seq = quantize(*opt.codebook, read_features(e.payload_path));
      } else {
        seq = read_tokens(e.payload_path);
      }
      if (opt.dedup) {
        seq = deduplicate(seq);
      }
      outcomes[i].score = score_sequence(*model, seq, e.id);
    } catch (const Error& err) {
      outcomes[i].reason = err.what();
    }
  });

  ScoreReport report;
  if (model) {
    report.header.model = backend_name(*model);
  } else {
    report.header.model = "external";
  }
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (outcomes[i].score) {
      const auto& s = *outcomes[i].score;
      report.records.push_back(
        { e.id, e.condition, s.cross_entropy, s.perplexity, s.token_count, s.clamped_steps });
    } else {
      report.skipped.push_back({ e.id, e.condition, outcomes[i].reason });
    }
  }
  if (report.records.empty()) {
    throw UndefinedError("no manifest entry could be scored" +
                         (report.skipped.empty() ? std::string()
                                                 : " (first failure: " + report.skipped.front().reason + ")"));
  }
  return report;
}

} // namespace gibscore
