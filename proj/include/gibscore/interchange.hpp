#pragma once

// Binary interchange formats. All files are little-endian with a fixed layout:
//
//   GIBF  "GIBF" | version u32 = 1 | frame_count u64 | dim u32 |
//         frame_count * dim f32 (row-major)
//   GIBT  "GIBT" | version u32 = 1 | length u64 | vocab u32 | dedup u8 |
//         length u32 tokens
//   GIBL  "GIBL" | version u32 = 1 | steps u64 | vocab u32 | normalized u8 |
//         steps * vocab f32 natural-log probabilities | steps u32 observed
//
// Readers reject wrong magic (FormatError), short or over-long files
// (CorruptionError) and invariant violations (ValidationError).

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gibscore {

using Token = std::uint32_t;

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr binary::Magic kFeaturesMagic = binary::make_magic("GIBF");
inline constexpr binary::Magic kTokensMagic = binary::make_magic("GIBT");
inline constexpr binary::Magic kLogitsMagic = binary::make_magic("GIBL");

//! Tolerance on |sum(exp(row)) - 1| for records flagged as normalized.
inline constexpr double kNormalizationTolerance = 1e-4;

//! T x D acoustic feature sequence, one row per frame.
struct FeatureMatrix
{
  std::uint64_t frame_count = 0;
  std::uint32_t dim = 1;
  std::vector<float> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::uint64_t frames, std::uint32_t d)
    : frame_count(frames)
    , dim(d)
    , values(static_cast<std::size_t>(frames * d), 0.0f)
  {}
  FeatureMatrix(std::uint64_t frames, std::uint32_t d, std::vector<float> v)
    : frame_count(frames)
    , dim(d)
    , values(std::move(v))
  {}

  std::span<const float> row(std::size_t t) const
  {
    return { values.data() + t * dim, dim };
  }
  std::span<float> row(std::size_t t) { return { values.data() + t * dim, dim }; }

  bool operator==(const FeatureMatrix&) const = default;
};

struct TokenSequence
{
  std::uint32_t vocab_size = 1;
  std::vector<Token> tokens;
  bool deduplicated = false;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }

  bool operator==(const TokenSequence&) const = default;
};

//! Per-step log p(x_t | x_<t) over the whole vocabulary, as produced by an
//! external model, together with the tokens that were actually observed.
struct LogitsRecord
{
  std::uint64_t step_count = 0;
  std::uint32_t vocab_size = 1;
  std::vector<float> log_probs;
  std::vector<Token> observed;
  bool normalized = false;

  std::span<const float> row(std::size_t t) const
  {
    return { log_probs.data() + t * vocab_size, vocab_size };
  }

  bool operator==(const LogitsRecord&) const = default;
};

// ---------------------------------------------------------------------------
// validation

inline void validate(const FeatureMatrix& m, const std::string& where = "features")
{
  if (m.dim == 0) {
    throw ValidationError(where + ": dim must be positive");
  }
  if (m.values.size() != m.frame_count * m.dim) {
    throw ValidationError(where + ": value count does not match frame_count x dim");
  }
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    if (!std::isfinite(m.values[i])) {
      throw ValidationError(where + ": non-finite value at frame " +
                            std::to_string(i / m.dim) + ", component " +
                            std::to_string(i % m.dim));
    }
  }
}

inline void validate(const TokenSequence& s, const std::string& where = "tokens")
{
  if (s.vocab_size == 0) {
    throw ValidationError(where + ": vocab_size must be positive");
  }
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i] >= s.vocab_size) {
      throw ValidationError(where + ": token " + std::to_string(s.tokens[i]) +
                            " at position " + std::to_string(i) +
                            " is out of range for vocab_size " +
                            std::to_string(s.vocab_size));
    }
    if (s.deduplicated && i > 0 && s.tokens[i] == s.tokens[i - 1]) {
      throw ValidationError(where + ": dedup flag set but tokens repeat at position " +
                            std::to_string(i));
    }
  }
}

inline void validate(const LogitsRecord& r, const std::string& where = "logits")
{
  if (r.vocab_size == 0) {
    throw ValidationError(where + ": vocab_size must be positive");
  }
  if (r.log_probs.size() != r.step_count * r.vocab_size ||
      r.observed.size() != r.step_count) {
    throw ValidationError(where + ": array sizes do not match step_count/vocab_size");
  }
  for (std::size_t t = 0; t < r.step_count; ++t) {
    if (r.observed[t] >= r.vocab_size) {
      throw ValidationError(where + ": observed token " + std::to_string(r.observed[t]) +
                            " at step " + std::to_string(t) + " is out of range");
    }
    double mass = 0.0;
    for (float lp : r.row(t)) {
      // -inf is a legitimate zero probability; NaN and +inf are not.
      if (std::isnan(lp) || lp == INFINITY) {
        throw ValidationError(where + ": invalid log-probability at step " +
                              std::to_string(t));
      }
      mass += std::exp(static_cast<double>(lp));
    }
    if (r.normalized && std::abs(mass - 1.0) > kNormalizationTolerance) {
      throw ValidationError(where + ": row " + std::to_string(t) + " sums to " +
                            std::to_string(mass) + " but record is flagged normalized");
    }
  }
}

// ---------------------------------------------------------------------------
// encode / decode

inline std::vector<char> encode(const FeatureMatrix& m)
{
  validate(m);
  binary::Writer w;
  w.put_magic(kFeaturesMagic);
  w.put(kFormatVersion);
  w.put(m.frame_count);
  w.put(m.dim);
  w.put_array(std::span<const float>(m.values));
  return w.bytes();
}

inline std::vector<char> encode(const TokenSequence& s)
{
  validate(s);
  binary::Writer w;
  w.put_magic(kTokensMagic);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint64_t>(s.tokens.size()));
  w.put(s.vocab_size);
  w.put(static_cast<std::uint8_t>(s.deduplicated ? 1 : 0));
  w.put_array(std::span<const Token>(s.tokens));
  return w.bytes();
}

inline std::vector<char> encode(const LogitsRecord& r)
{
  validate(r);
  binary::Writer w;
  w.put_magic(kLogitsMagic);
  w.put(kFormatVersion);
  w.put(r.step_count);
  w.put(r.vocab_size);
  w.put(static_cast<std::uint8_t>(r.normalized ? 1 : 0));
  w.put_array(std::span<const float>(r.log_probs));
  w.put_array(std::span<const Token>(r.observed));
  return w.bytes();
}

namespace detail {

inline bool read_flag(binary::Reader& in, const char* name)
{
  auto v = in.get<std::uint8_t>();
  if (v > 1) {
    throw ValidationError(in.source() + ": " + name + " flag must be 0 or 1");
  }
  return v == 1;
}

} // namespace detail

inline FeatureMatrix decode_features(binary::Reader in)
{
  in.expect_magic(kFeaturesMagic);
  in.expect_version(kFormatVersion);
  FeatureMatrix m;
  m.frame_count = in.get<std::uint64_t>();
  m.dim = in.get<std::uint32_t>();
  if (m.dim == 0) {
    throw ValidationError(in.source() + ": dim must be positive");
  }
  if (m.frame_count > in.remaining() / (sizeof(float) * m.dim)) {
    throw CorruptionError(in.source() + ": truncated feature payload");
  }
  m.values = in.get_array<float>(m.frame_count * m.dim);
  in.expect_end();
  validate(m, in.source());
  return m;
}

inline TokenSequence decode_tokens(binary::Reader in)
{
  in.expect_magic(kTokensMagic);
  in.expect_version(kFormatVersion);
  TokenSequence s;
  auto length = in.get<std::uint64_t>();
  s.vocab_size = in.get<std::uint32_t>();
  s.deduplicated = detail::read_flag(in, "dedup");
  s.tokens = in.get_array<Token>(length);
  in.expect_end();
  validate(s, in.source());
  return s;
}

inline LogitsRecord decode_logits(binary::Reader in)
{
  in.expect_magic(kLogitsMagic);
  in.expect_version(kFormatVersion);
  LogitsRecord r;
  r.step_count = in.get<std::uint64_t>();
  r.vocab_size = in.get<std::uint32_t>();
  r.normalized = detail::read_flag(in, "normalized");
  if (r.vocab_size == 0) {
    throw ValidationError(in.source() + ": vocab_size must be positive");
  }
  if (r.step_count > in.remaining() / (sizeof(float) * r.vocab_size + sizeof(Token))) {
    throw CorruptionError(in.source() + ": truncated logits payload");
  }
  r.log_probs = in.get_array<float>(r.step_count * r.vocab_size);
  r.observed = in.get_array<Token>(r.step_count);
  in.expect_end();
  validate(r, in.source());
  return r;
}

inline void write_features(const FeatureMatrix& m, const std::filesystem::path& destination)
{
  binary::save_bytes(encode(m), destination);
}

inline void write_tokens(const TokenSequence& s, const std::filesystem::path& destination)
{
  binary::save_bytes(encode(s), destination);
}

inline void write_logits(const LogitsRecord& r, const std::filesystem::path& destination)
{
  binary::save_bytes(encode(r), destination);
}

inline FeatureMatrix read_features(const std::filesystem::path& source)
{
  return decode_features(binary::Reader::open(source));
}

inline TokenSequence read_tokens(const std::filesystem::path& source)
{
  return decode_tokens(binary::Reader::open(source));
}

inline LogitsRecord read_logits(const std::filesystem::path& source)
{
  return decode_logits(binary::Reader::open(source));
}

} // namespace gibscore
