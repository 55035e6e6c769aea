#pragma once

// Content-intrusive error rates (WER / PER / token error rate) from a
// unit-cost minimum edit distance alignment.

#include "gibscore/error.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gibscore {

struct AlignmentResult
{
  std::uint64_t substitutions = 0;
  std::uint64_t deletions = 0;
  std::uint64_t insertions = 0;
  std::uint64_t hits = 0;
  std::uint64_t reference_length = 0;
  //! (S + D + I) / N; NaN when the reference is empty (see `defined`).
  double error_rate = 0.0;
  bool defined = true;

  std::uint64_t distance() const noexcept { return substitutions + deletions + insertions; }
};

//! Levenshtein alignment of `hypothesis` against `reference`.
//!
//! The backtrace prefers, in order, a diagonal move (hit or substitution), a
//! deletion and an insertion whenever several moves are optimal, so the
//! S / D / I split is deterministic.
template<typename T>
AlignmentResult align(std::span<const T> reference, std::span<const T> hypothesis)
{
  const std::size_t n = reference.size();
  const std::size_t m = hypothesis.size();
  const std::size_t width = m + 1;
  std::vector<std::uint32_t> cost((n + 1) * width);
  for (std::size_t i = 0; i <= n; ++i) {
    cost[i * width] = static_cast<std::uint32_t>(i);
  }
  for (std::size_t j = 0; j <= m; ++j) {
    cost[j] = static_cast<std::uint32_t>(j);
  }
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::uint32_t diag = cost[(i - 1) * width + j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      const std::uint32_t del = cost[(i - 1) * width + j] + 1;
      const std::uint32_t ins = cost[i * width + j - 1] + 1;
      cost[i * width + j] = std::min({ diag, del, ins });
    }
  }

  AlignmentResult r;
  r.reference_length = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::uint32_t here = cost[i * width + j];
    if (i > 0 && j > 0) {
      const bool same = reference[i - 1] == hypothesis[j - 1];
      if (here == cost[(i - 1) * width + j - 1] + (same ? 0 : 1)) {
        (same ? r.hits : r.substitutions)++;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && here == cost[(i - 1) * width + j] + 1) {
      ++r.deletions;
      --i;
      continue;
    }
    ++r.insertions;
    --j;
  }

  if (n > 0) {
    r.error_rate = static_cast<double>(r.distance()) / static_cast<double>(n);
  } else {
    r.defined = false;
    r.error_rate = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

template<typename T>
AlignmentResult align(const std::vector<T>& reference, const std::vector<T>& hypothesis)
{
  return align(std::span<const T>(reference), std::span<const T>(hypothesis));
}

inline AlignmentResult align(std::string_view reference, std::string_view hypothesis)
{
  return align(std::span<const char>(reference.data(), reference.size()),
               std::span<const char>(hypothesis.data(), hypothesis.size()));
}

struct CorpusErrorRate
{
  double pooled = 0.0; //!< sum(S + D + I) / sum(N)
  std::uint64_t total_errors = 0;
  std::uint64_t total_reference = 0;
  std::vector<AlignmentResult> per_pair;
};

template<typename T>
CorpusErrorRate corpus_error_rate(std::span<const std::pair<std::vector<T>, std::vector<T>>> pairs)
{
  CorpusErrorRate out;
  for (const auto& [ref, hyp] : pairs) {
    auto r = align(ref, hyp);
    out.total_errors += r.distance();
    out.total_reference += r.reference_length;
    out.per_pair.push_back(r);
  }
  if (out.total_reference == 0) {
    throw UndefinedError("error rate undefined: every reference is empty");
  }
  out.pooled = static_cast<double>(out.total_errors) / static_cast<double>(out.total_reference);
  return out;
}

template<typename T>
CorpusErrorRate corpus_error_rate(const std::vector<std::pair<std::vector<T>, std::vector<T>>>& pairs)
{
  return corpus_error_rate(std::span<const std::pair<std::vector<T>, std::vector<T>>>(pairs));
}

// ---------------------------------------------------------------------------
// transcript handling

//! Word symbols: ASCII-lowercased, characters . , ! ? ; : " removed,
//! split on whitespace.
inline std::vector<std::string> normalize_words(std::string_view text)
{
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    if (std::string_view(".,!?;:\"").find(c) != std::string_view::npos) {
      continue;
    }
    cleaned += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::vector<std::string> words;
  std::istringstream in(cleaned);
  for (std::string w; in >> w;) {
    words.push_back(std::move(w));
  }
  return words;
}

//! Phone symbols: whitespace-separated, otherwise verbatim.
inline std::vector<std::string> split_symbols(std::string_view text)
{
  std::vector<std::string> out;
  std::istringstream in{ std::string(text) };
  for (std::string s; in >> s;) {
    out.push_back(std::move(s));
  }
  return out;
}

//! Transcript file: UTF-8, one utterance per line, "<id><whitespace><text>".
//! Empty lines are ignored; a line holding only an id is an empty transcript.
//! Entries are returned in file order.
inline std::vector<std::pair<std::string, std::string>> read_transcripts(const std::string& path)
{
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open transcript file '" + path + "'");
  }
  std::vector<std::pair<std::string, std::string>> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos) {
      continue;
    }
    const auto id_end = line.find_first_of(" \t", start);
    std::string id = line.substr(start, id_end == std::string::npos ? std::string::npos : id_end - start);
    std::string text;
    if (id_end != std::string::npos) {
      const auto text_start = line.find_first_not_of(" \t", id_end);
      if (text_start != std::string::npos) {
        text = line.substr(text_start);
      }
    }
    if (!seen.insert(id).second) {
      throw ValidationError(path + ":" + std::to_string(line_no) + ": duplicate id '" + id + "'");
    }
    out.emplace_back(std::move(id), std::move(text));
  }
  return out;
}

} // namespace gibscore
