#pragma once

// Score reports.
//
// Machine form (JSON Lines, one object per line, in this order):
//   {"type":"header", "format":"gibscore-report", "version":1,
//    "unit":"nats/token", "polarity":"lower_is_better", "model":...,
//    "config_hash":..., "seed":..., "generated_at":...}
//   {"type":"record", "id", "condition", "score", "score_bits", "perplexity",
//    "token_count", "clamped_steps"}                       (manifest order)
//   {"type":"skipped", "id", "condition", "reason"}
//   {"type":"summary", "condition", "mean", "std", "count"} (first-seen order)
//
// Flat form: tab-separated, one row per record, with a header row.

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gibscore {

//! Relative tolerance for perplexity == exp(score) when reading a report.
inline constexpr double kPerplexityTolerance = 1e-9;

struct ScoreRecord
{
  std::string id;
  std::string condition;
  double score = 0.0; //!< cross-entropy, nats per token
  double perplexity = 1.0;
  std::uint64_t token_count = 0;
  std::uint64_t clamped_steps = 0;

  double score_bits() const noexcept { return score / std::numbers::ln2; }
};

struct SkippedEntry
{
  std::string id;
  std::string condition;
  std::string reason;
};

struct ConditionSummary
{
  std::string condition;
  double mean = 0.0;
  double stddev = 0.0; //!< sample standard deviation (n - 1); 0 when count == 1
  std::uint64_t count = 0;
};

struct ReportHeader
{
  std::string unit = "nats/token";
  std::string polarity = "lower_is_better";
  std::string model;
  std::string config_hash;
  std::optional<std::uint64_t> seed;
  std::string generated_at;
};

struct ScoreReport
{
  ReportHeader header;
  std::vector<ScoreRecord> records;
  std::vector<SkippedEntry> skipped;

  //! Per-condition mean / sd / count in order of first appearance.
  std::vector<ConditionSummary> summary() const
  {
    std::vector<ConditionSummary> out;
    std::vector<std::vector<double>> values;
    for (const auto& r : records) {
      std::size_t i = 0;
      while (i < out.size() && out[i].condition != r.condition) {
        ++i;
      }
      if (i == out.size()) {
        out.push_back({ r.condition, 0.0, 0.0, 0 });
        values.emplace_back();
      }
      values[i].push_back(r.score);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& v = values[i];
      double sum = 0.0;
      for (double x : v) {
        sum += x;
      }
      const double mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) {
        ss += (x - mean) * (x - mean);
      }
      out[i].mean = mean;
      out[i].count = v.size();
      out[i].stddev = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    }
    return out;
  }
};

inline std::string report_to_jsonl(const ScoreReport& report)
{
  using nlohmann::json;
  std::ostringstream out;
  json h;
  h["type"] = "header";
  h["format"] = "gibscore-report";
  h["version"] = 1;
  h["unit"] = report.header.unit;
  h["polarity"] = report.header.polarity;
  h["model"] = report.header.model;
  h["config_hash"] = report.header.config_hash;
  h["seed"] = report.header.seed ? json(*report.header.seed) : json(nullptr);
  h["generated_at"] = report.header.generated_at;
  out << h.dump() << '\n';
  for (const auto& r : report.records) {
    json j;
    j["type"] = "record";
    j["id"] = r.id;
    j["condition"] = r.condition;
    j["score"] = r.score;
    j["score_bits"] = r.score_bits();
    j["perplexity"] = r.perplexity;
    j["token_count"] = r.token_count;
    j["clamped_steps"] = r.clamped_steps;
    out << j.dump() << '\n';
  }
  for (const auto& s : report.skipped) {
    json j;
    j["type"] = "skipped";
    j["id"] = s.id;
    j["condition"] = s.condition;
    j["reason"] = s.reason;
    out << j.dump() << '\n';
  }
  for (const auto& s : report.summary()) {
    json j;
    j["type"] = "summary";
    j["condition"] = s.condition;
    j["mean"] = s.mean;
    j["std"] = s.stddev;
    j["count"] = s.count;
    out << j.dump() << '\n';
  }
  return out.str();
}

namespace detail {

inline std::string format_real(double v)
{
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

} // namespace detail

inline std::string report_to_tsv(const ScoreReport& report)
{
  std::ostringstream out;
  out << "id\tcondition\tscore_nats\tscore_bits\tperplexity\ttoken_count\n";
  for (const auto& r : report.records) {
    out << r.id << '\t' << r.condition << '\t' << detail::format_real(r.score) << '\t'
        << detail::format_real(r.score_bits()) << '\t'
        << detail::format_real(r.perplexity) << '\t' << r.token_count << '\n';
  }
  return out.str();
}

inline void save_text(const std::string& text, const std::filesystem::path& destination)
{
  binary::save_bytes(std::vector<char>(text.begin(), text.end()), destination);
}

//! Writes `<stem>.jsonl` and `<stem>.tsv` next to each other. `destination`
//! may carry either extension or none.
inline void write_report(const ScoreReport& report, const std::filesystem::path& destination)
{
  auto stem = destination;
  if (stem.extension() == ".jsonl" || stem.extension() == ".tsv") {
    stem.replace_extension();
  }
  auto jsonl = stem;
  jsonl += ".jsonl";
  auto tsv = stem;
  tsv += ".tsv";
  save_text(report_to_jsonl(report), jsonl);
  save_text(report_to_tsv(report), tsv);
}

inline ScoreReport parse_report(std::istream& in, const std::string& source = "report")
{
  using nlohmann::json;
  ScoreReport report;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    try {
      const auto type = j.at("type").get<std::string>();
      if (type == "header") {
        have_header = true;
        report.header.unit = j.value("unit", "nats/token");
        report.header.polarity = j.value("polarity", "lower_is_better");
        report.header.model = j.value("model", "");
        report.header.config_hash = j.value("config_hash", "");
        if (j.contains("seed") && !j["seed"].is_null()) {
          report.header.seed = j["seed"].get<std::uint64_t>();
        }
        report.header.generated_at = j.value("generated_at", "");
      } else if (type == "record") {
        ScoreRecord r;
        r.id = j.at("id").get<std::string>();
        r.condition = j.at("condition").get<std::string>();
        r.score = j.at("score").get<double>();
        r.perplexity = j.at("perplexity").get<double>();
        r.token_count = j.at("token_count").get<std::uint64_t>();
        r.clamped_steps = j.value("clamped_steps", std::uint64_t{ 0 });
        const double expected = std::exp(r.score);
        if (std::abs(r.perplexity - expected) > kPerplexityTolerance * expected) {
          throw ValidationError(where + ": perplexity != exp(score) for '" + r.id + "'");
        }
        report.records.push_back(std::move(r));
      } else if (type == "skipped") {
        report.skipped.push_back({ j.at("id").get<std::string>(),
                                   j.value("condition", ""),
                                   j.value("reason", "") });
      } else if (type != "summary") {
        throw FormatError(where + ": unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (!have_header) {
    throw FormatError(source + ": missing report header");
  }
  return report;
}

inline ScoreReport read_report(const std::filesystem::path& source)
{
  std::ifstream in(source);
  if (!in) {
    throw Error("cannot open report '" + source.string() + "'");
  }
  return parse_report(in, source.string());
}

} // namespace gibscore
