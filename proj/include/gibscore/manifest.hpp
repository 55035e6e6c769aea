#pragma once

// Manifests are JSON Lines: one self-describing object per line, e.g.
//
//   {"id":"utt001","condition":"noisy_-5dB","path":"utt001.gibf","kind":"features",
//    "reference_metric":0.42}
//
// Blank lines and lines starting with '#' are ignored. Relative paths are
// resolved against the directory containing the manifest. Payload files are
// not opened at load time; a missing file or a kind/magic mismatch surfaces
// when the entry is used (see check_payload_kind).

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace gibscore {

enum class PayloadKind
{
  features,
  tokens,
  logits
};

inline std::string to_string(PayloadKind kind)
{
  switch (kind) {
    case PayloadKind::features:
      return "features";
    case PayloadKind::tokens:
      return "tokens";
    case PayloadKind::logits:
      return "logits";
  }
  return "unknown";
}

inline std::optional<PayloadKind> parse_payload_kind(const std::string& s)
{
  if (s == "features")
    return PayloadKind::features;
  if (s == "tokens")
    return PayloadKind::tokens;
  if (s == "logits")
    return PayloadKind::logits;
  return std::nullopt;
}

struct ManifestEntry
{
  std::string id;
  std::string condition;
  std::filesystem::path payload_path;
  PayloadKind kind = PayloadKind::tokens;
  std::optional<double> reference_metric;
  std::optional<std::filesystem::path> reference_tokens_path;
  //! Free-form upstream metadata (feature layer, frame rate, ...), carried
  //! through untouched.
  nlohmann::json metadata;
};

struct Manifest
{
  std::vector<ManifestEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
};

//! Kind implied by a file's magic bytes.
inline PayloadKind probe_kind(const std::filesystem::path& path)
{
  if (!std::filesystem::exists(path)) {
    throw Error("payload file '" + path.string() + "' does not exist");
  }
  const auto magic = binary::peek_magic(path);
  if (magic == binary::magic_string(kFeaturesMagic))
    return PayloadKind::features;
  if (magic == binary::magic_string(kTokensMagic))
    return PayloadKind::tokens;
  if (magic == binary::magic_string(kLogitsMagic))
    return PayloadKind::logits;
  throw FormatError(path.string() + ": unrecognized magic bytes");
}

inline void check_payload_kind(const ManifestEntry& entry)
{
  const auto actual = probe_kind(entry.payload_path);
  if (actual != entry.kind) {
    throw ValidationError("entry '" + entry.id + "' declares kind '" +
                          to_string(entry.kind) + "' but '" +
                          entry.payload_path.string() + "' holds " + to_string(actual));
  }
}

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base,
                                     const std::string& p)
{
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) {
    path = base / path;
  }
  return path.lexically_normal();
}

inline std::string field_string(const nlohmann::json& j,
                                const char* key,
                                const std::string& where)
{
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ValidationError(where + ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

} // namespace detail

inline Manifest parse_manifest(std::istream& in,
                               const std::filesystem::path& base_dir,
                               const std::string& source = "manifest")
{
  Manifest manifest;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') {
      continue;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!j.is_object()) {
      throw FormatError(where + ": expected a JSON object");
    }

    ManifestEntry e;
    e.id = detail::field_string(j, "id", where);
    e.condition = detail::field_string(j, "condition", where);
    e.payload_path = detail::resolve(base_dir, detail::field_string(j, "path", where));
    auto kind = parse_payload_kind(detail::field_string(j, "kind", where));
    if (!kind) {
      throw ValidationError(where + ": kind must be one of features, tokens, logits");
    }
    e.kind = *kind;
    if (auto it = j.find("reference_metric"); it != j.end() && !it->is_null()) {
      if (!it->is_number()) {
        throw ValidationError(where + ": reference_metric must be a number");
      }
      e.reference_metric = it->get<double>();
    }
    if (auto it = j.find("reference_tokens_path"); it != j.end() && !it->is_null()) {
      e.reference_tokens_path = detail::resolve(base_dir, it->get<std::string>());
    }
    if (auto it = j.find("metadata"); it != j.end()) {
      e.metadata = *it;
    }
    if (!seen.insert(e.id).second) {
      throw ValidationError(where + ": duplicate id '" + e.id + "'");
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

inline Manifest read_manifest(const std::filesystem::path& source)
{
  std::ifstream in(source);
  if (!in) {
    throw Error("cannot open manifest '" + source.string() + "'");
  }
  return parse_manifest(in, source.parent_path(), source.string());
}

//! Serializes one entry. Paths inside `relative_to` are written relative to
//! it so that a manifest and its payload directory can be moved together.
inline nlohmann::json to_json(const ManifestEntry& e,
                              const std::filesystem::path& relative_to = {})
{
  auto rel = [&](const std::filesystem::path& p) {
    if (relative_to.empty()) {
      return p.generic_string();
    }
    auto r = p.lexically_relative(relative_to);
    if (r.empty() || *r.begin() == "..") {
      return p.generic_string();
    }
    return r.generic_string();
  };
  nlohmann::json j;
  j["id"] = e.id;
  j["condition"] = e.condition;
  j["path"] = rel(e.payload_path);
  j["kind"] = to_string(e.kind);
  if (e.reference_metric) {
    j["reference_metric"] = *e.reference_metric;
  }
  if (e.reference_tokens_path) {
    j["reference_tokens_path"] = rel(*e.reference_tokens_path);
  }
  if (!e.metadata.is_null()) {
    j["metadata"] = e.metadata;
  }
  return j;
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& destination)
{
  const auto base = destination.parent_path().lexically_normal();
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    out << to_json(e, base).dump() << '\n';
  }
  const auto text = out.str();
  binary::save_bytes(std::vector<char>(text.begin(), text.end()), destination);
}

} // namespace gibscore
