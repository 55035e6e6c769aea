#pragma once

// End-to-end pipeline driven by a JSON run configuration:
//
//   codebook -> tokenize -> train-ulm -> score -> eval
//
// Configuration (relative paths resolve against the config file's directory):
//
//   {
//     "seed": 7,
//     "paths": { "workdir": "work", "train_manifest": "train.jsonl",
//                "eval_manifest": "eval.jsonl", "reference": null },
//     "tokenizer": { "k": 100, "max_iter": 100, "tol": 1e-6 },
//     "ulm": { "backend": "ngram", "order": 3, "smoothing_k": 0.1,
//              "embed_dim": 64, "hidden_dim": 128, "epochs": 10,
//              "batch_size": 16, "learning_rate": 0.001, "clip_norm": 5.0 },
//     "scoring": { "dedup": true },
//     "stats": { "bins": 20, "bandwidth": null }
//   }
//
// Precedence: command-line override > config file > GIBSCORE_WORKDIR (workdir
// only) > built-in default.
//
// Workdir layout:
//   codebook.gibc, tokens/{train,eval}/<id>.gibt, tokens/{train,eval}.jsonl,
//   model.gibn | model.gibr, train_log.json, report.{jsonl,tsv}, eval/...,
//   run.json (config hash, seed, stages run)

#include "gibscore/analysis_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/manifest.hpp"
#include "gibscore/parallel.hpp"
#include "gibscore/recurrent.hpp"
#include "gibscore/report.hpp"
#include "gibscore/scoring.hpp"
#include "gibscore/stats.hpp"
#include "gibscore/tokenizer.hpp"
#include "gibscore/ulm.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace gibscore {

inline constexpr const char* kWorkdirEnvironment = "GIBSCORE_WORKDIR";

enum class Backend
{
  ngram,
  rnn
};

struct RunConfig
{
  std::uint64_t seed = 0;
  std::filesystem::path workdir;
  std::filesystem::path train_manifest;
  std::filesystem::path eval_manifest;
  std::optional<std::filesystem::path> reference;

  std::uint32_t k = kDefaultCodebookSize;
  std::uint32_t max_iter = 100;
  double tol = 1e-6;

  Backend backend = Backend::ngram;
  std::uint32_t order = 3;
  double smoothing_k = 0.1;
  RecurrentConfig rnn;

  bool dedup = false;

  std::size_t bins = 20;
  std::optional<double> bandwidth;

  unsigned jobs = 1;
};

//! 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) noexcept
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v)
{
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

//! Canonical JSON of every setting that influences outputs (not `jobs`,
//! which never changes results).
inline nlohmann::json to_json(const RunConfig& c)
{
  nlohmann::json j;
  j["seed"] = c.seed;
  j["paths"] = { { "workdir", c.workdir.generic_string() },
                 { "train_manifest", c.train_manifest.generic_string() },
                 { "eval_manifest", c.eval_manifest.generic_string() },
                 { "reference", c.reference ? nlohmann::json(c.reference->generic_string()) : nlohmann::json(nullptr) } };
  j["tokenizer"] = { { "k", c.k }, { "max_iter", c.max_iter }, { "tol", c.tol } };
  j["ulm"] = { { "backend", c.backend == Backend::ngram ? "ngram" : "rnn" },
               { "order", c.order },
               { "smoothing_k", c.smoothing_k },
               { "embed_dim", c.rnn.embed_dim },
               { "hidden_dim", c.rnn.hidden_dim },
               { "epochs", c.rnn.epochs },
               { "batch_size", c.rnn.batch_size },
               { "learning_rate", c.rnn.learning_rate },
               { "clip_norm", c.rnn.clip_norm } };
  j["scoring"] = { { "dedup", c.dedup } };
  j["stats"] = { { "bins", c.bins }, { "bandwidth", c.bandwidth ? nlohmann::json(*c.bandwidth) : nlohmann::json(nullptr) } };
  return j;
}

//! Hash of the canonical config. The workdir is left out so the same run in
//! two directories carries the same stamp.
inline std::string config_hash(const RunConfig& c)
{
  auto j = to_json(c);
  j["paths"].erase("workdir");
  return hex64(fnv1a(j.dump()));
}

namespace detail {

template<typename T>
void read_optional(const nlohmann::json& j, const char* section, const char* key, T& out)
{
  if (!j.contains(section)) {
    return;
  }
  const auto& s = j.at(section);
  if (s.contains(key) && !s.at(key).is_null()) {
    try {
      out = s.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config: invalid value for ") + section + "." + key + ": " + e.what());
    }
  }
}

inline std::filesystem::path resolve_against(const std::filesystem::path& base, const std::string& p)
{
  std::filesystem::path path(p);
  return (path.is_relative() && !base.empty()) ? (base / path).lexically_normal() : path;
}

} // namespace detail

//! Parses a configuration document. `base_dir` anchors relative paths.
inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
  if (!j.is_object()) {
    throw UsageError("config: top level must be an object");
  }
  static const std::vector<std::string> known = { "seed", "paths", "tokenizer", "ulm", "scoring", "stats", "jobs" };
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw UsageError("config: unknown key '" + key + "'");
    }
  }
  RunConfig c;
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
  }
  c.rnn.seed = c.seed;
  if (j.contains("jobs") && !j.at("jobs").is_null()) {
    c.jobs = j.at("jobs").get<unsigned>();
  } else {
    c.jobs = default_jobs();
  }

  std::string workdir, train, eval, reference;
  detail::read_optional(j, "paths", "workdir", workdir);
  detail::read_optional(j, "paths", "train_manifest", train);
  detail::read_optional(j, "paths", "eval_manifest", eval);
  detail::read_optional(j, "paths", "reference", reference);
  if (workdir.empty()) {
    if (const char* env = std::getenv(kWorkdirEnvironment); env && *env) {
      workdir = env;
    } else {
      workdir = "work";
    }
  }
  c.workdir = detail::resolve_against(base_dir, workdir);
  if (!train.empty()) {
    c.train_manifest = detail::resolve_against(base_dir, train);
  }
  if (!eval.empty()) {
    c.eval_manifest = detail::resolve_against(base_dir, eval);
  }
  if (!reference.empty()) {
    c.reference = detail::resolve_against(base_dir, reference);
  }

  detail::read_optional(j, "tokenizer", "k", c.k);
  detail::read_optional(j, "tokenizer", "max_iter", c.max_iter);
  detail::read_optional(j, "tokenizer", "tol", c.tol);

  std::string backend = "ngram";
  detail::read_optional(j, "ulm", "backend", backend);
  if (backend == "ngram") {
    c.backend = Backend::ngram;
  } else if (backend == "rnn") {
    c.backend = Backend::rnn;
  } else {
    throw UsageError("config: ulm.backend must be 'ngram' or 'rnn'");
  }
  detail::read_optional(j, "ulm", "order", c.order);
  detail::read_optional(j, "ulm", "smoothing_k", c.smoothing_k);
  detail::read_optional(j, "ulm", "embed_dim", c.rnn.embed_dim);
  detail::read_optional(j, "ulm", "hidden_dim", c.rnn.hidden_dim);
  detail::read_optional(j, "ulm", "epochs", c.rnn.epochs);
  detail::read_optional(j, "ulm", "batch_size", c.rnn.batch_size);
  detail::read_optional(j, "ulm", "learning_rate", c.rnn.learning_rate);
  detail::read_optional(j, "ulm", "clip_norm", c.rnn.clip_norm);

  detail::read_optional(j, "scoring", "dedup", c.dedup);
  detail::read_optional(j, "stats", "bins", c.bins);
  double bw = 0.0;
  detail::read_optional(j, "stats", "bandwidth", bw);
  if (bw > 0.0) {
    c.bandwidth = bw;
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw UsageError("cannot open config file '" + path.string() + "'");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config '" + path.string() + "': " + e.what());
  }
  return parse_config(j, path.parent_path());
}

//! Checks settings and the existence of input manifests.
inline void validate(const RunConfig& c)
{
  if (c.k == 0) {
    throw UsageError("config: tokenizer.k must be positive");
  }
  if (c.order < 1) {
    throw UsageError("config: ulm.order must be at least 1");
  }
  if (!(c.smoothing_k > 0.0)) {
    throw UsageError("config: ulm.smoothing_k must be positive");
  }
  if (c.bins == 0) {
    throw UsageError("config: stats.bins must be positive");
  }
  if (c.train_manifest.empty() || !std::filesystem::exists(c.train_manifest)) {
    throw UsageError("config: train manifest '" + c.train_manifest.string() + "' not found");
  }
  if (c.eval_manifest.empty() || !std::filesystem::exists(c.eval_manifest)) {
    throw UsageError("config: eval manifest '" + c.eval_manifest.string() + "' not found");
  }
  if (c.reference && !std::filesystem::exists(*c.reference)) {
    throw UsageError("config: reference file '" + c.reference->string() + "' not found");
  }
}

inline const std::vector<std::string>& pipeline_stages()
{
  static const std::vector<std::string> stages = { "codebook", "tokenize", "train-ulm", "score", "eval" };
  return stages;
}

//! Per-id reference values from a JSON Lines file. Each line needs "id" and
//! one numeric field among "reference_metric", "error_rate" or "value";
//! lines without them (headers, pooled summaries) are ignored.
inline std::map<std::string, double> read_reference_values(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open reference file '" + path.string() + "'");
  }
  std::map<std::string, double> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[line.find_first_not_of(" \t\r")] == '#') {
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
      continue;
    }
    for (const char* key : { "reference_metric", "error_rate", "value" }) {
      if (j.contains(key) && j[key].is_number()) {
        if (!out.emplace(j["id"].get<std::string>(), j[key].get<double>()).second) {
          throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" +
                                j["id"].get<std::string>() + "'");
        }
        break;
      }
    }
  }
  return out;
}

//! Quantizes feature entries with `codebook` (when given) into `token_dir`
//! and returns a manifest whose entries all point at token or logits files.
//! Token and logits entries pass through unchanged. Failures are collected in
//! `skipped` rather than thrown.
inline Manifest tokenize_manifest(const Manifest& in,
                                  const Codebook* codebook,
                                  const std::filesystem::path& token_dir,
                                  bool dedup,
                                  unsigned jobs,
                                  std::vector<SkippedEntry>& skipped)
{
  std::filesystem::create_directories(token_dir);
  std::vector<std::optional<ManifestEntry>> out(in.entries.size());
  std::vector<std::string> errors(in.entries.size());
  parallel_for(in.entries.size(), jobs, [&](std::size_t i) {
    const auto& e = in.entries[i];
    try {
      check_payload_kind(e);
      ManifestEntry o = e;
      if (e.kind == PayloadKind::features) {
        if (!codebook) {
          throw DependencyError("feature payload needs a codebook; run stage 'codebook' first");
        }
        auto seq = quantize(*codebook, read_features(e.payload_path));
        if (dedup) {
          seq = deduplicate(seq);
        }
        o.payload_path = token_dir / (e.id + ".gibt");
        o.kind = PayloadKind::tokens;
        write_tokens(seq, o.payload_path);
      }
      out[i] = std::move(o);
    } catch (const Error& err) {
      errors[i] = err.what();
    }
  });
  Manifest m;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i]) {
      m.entries.push_back(std::move(*out[i]));
    } else {
      skipped.push_back({ in.entries[i].id, in.entries[i].condition, errors[i] });
    }
  }
  return m;
}

//! Token sequences of every token entry in a manifest (logits entries are
//! ignored), optionally deduplicated.
inline std::vector<TokenSequence> load_token_corpus(const Manifest& m, bool dedup)
{
  std::vector<TokenSequence> corpus;
  for (const auto& e : m.entries) {
    if (e.kind != PayloadKind::tokens) {
      continue;
    }
    check_payload_kind(e);
    auto seq = read_tokens(e.payload_path);
    corpus.push_back(dedup ? deduplicate(seq) : std::move(seq));
  }
  if (corpus.empty()) {
    throw InsufficientDataError("manifest holds no token sequences to train on");
  }
  return corpus;
}

struct PipelineResult
{
  int exit_status = 0;
  std::vector<std::string> stages_run;
  std::vector<SkippedEntry> skipped;
  std::vector<std::filesystem::path> artifacts;
  std::vector<std::string> notes;
};

namespace detail {

inline bool has_features(const Manifest& m)
{
  for (const auto& e : m.entries) {
    if (e.kind == PayloadKind::features) {
      return true;
    }
  }
  return false;
}

inline void require_artifact(const std::filesystem::path& p, const std::string& stage)
{
  if (!std::filesystem::exists(p)) {
    throw DependencyError("missing '" + p.string() + "'; run stage '" + stage + "' first");
  }
}

} // namespace detail

//! Runs the requested stages (in canonical order regardless of the order
//! given). `timestamp` is written into the generated_at fields and is the only
//! content that differs between two runs with the same config.
inline PipelineResult run_pipeline(const RunConfig& cfg,
                                   std::vector<std::string> stages,
                                   const std::string& timestamp = {})
{
  namespace fs = std::filesystem;
  validate(cfg);
  if (stages.empty()) {
    stages = pipeline_stages();
  }
  for (const auto& s : stages) {
    if (std::find(pipeline_stages().begin(), pipeline_stages().end(), s) == pipeline_stages().end()) {
      throw UsageError("unknown stage '" + s + "'");
    }
  }
  auto wants = [&](const std::string& s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); };

  const auto hash = config_hash(cfg);
  const fs::path work = cfg.workdir;
  fs::create_directories(work);
  const fs::path codebook_path = work / "codebook.gibc";
  const fs::path tokens_dir = work / "tokens";
  const fs::path train_tokens = tokens_dir / "train.jsonl";
  const fs::path eval_tokens = tokens_dir / "eval.jsonl";
  const fs::path model_path = work / (cfg.backend == Backend::ngram ? "model.gibn" : "model.gibr");
  const fs::path report_path = work / "report.jsonl";
  const fs::path eval_dir = work / "eval";

  PipelineResult result;
  const Manifest train = read_manifest(cfg.train_manifest);
  const Manifest eval = read_manifest(cfg.eval_manifest);

  if (wants("codebook")) {
    result.stages_run.push_back("codebook");
    if (!detail::has_features(train)) {
      result.notes.push_back("codebook: train manifest holds no features; nothing to do");
    } else {
      std::vector<FeatureMatrix> corpus;
      for (const auto& e : train.entries) {
        if (e.kind == PayloadKind::features) {
          check_payload_kind(e);
          corpus.push_back(read_features(e.payload_path));
        }
      }
      KMeansOptions opt;
      opt.k = cfg.k;
      opt.max_iter = cfg.max_iter;
      opt.rel_tol = cfg.tol;
      opt.seed = cfg.seed;
      opt.jobs = cfg.jobs;
      write_codebook(train_codebook(corpus, opt), codebook_path);
      result.artifacts.push_back(codebook_path);
    }
  }

  if (wants("tokenize")) {
    result.stages_run.push_back("tokenize");
    std::optional<Codebook> cb;
    if (detail::has_features(train) || detail::has_features(eval)) {
      detail::require_artifact(codebook_path, "codebook");
      cb = read_codebook(codebook_path);
    }
    const Codebook* cbp = cb ? &*cb : nullptr;
    // dedup is applied when training and scoring, not here
    write_manifest(tokenize_manifest(train, cbp, tokens_dir / "train", false, cfg.jobs, result.skipped), train_tokens);
    write_manifest(tokenize_manifest(eval, cbp, tokens_dir / "eval", false, cfg.jobs, result.skipped), eval_tokens);
    result.artifacts.push_back(train_tokens);
    result.artifacts.push_back(eval_tokens);
  }

  if (wants("train-ulm")) {
    result.stages_run.push_back("train-ulm");
    detail::require_artifact(train_tokens, "tokenize");
    const auto corpus = load_token_corpus(read_manifest(train_tokens), cfg.dedup);
    nlohmann::json log;
    log["config_hash"] = hash;
    log["seed"] = cfg.seed;
    if (cfg.backend == Backend::ngram) {
      write_ngram(train_ngram(corpus, cfg.order, cfg.smoothing_k), model_path);
      log["backend"] = "ngram";
    } else {
      auto rc = cfg.rnn;
      rc.seed = cfg.seed;
      auto trained = train_recurrent(corpus, rc);
      write_recurrent(trained.model, model_path);
      log["backend"] = "rnn";
      log["epoch_loss"] = trained.epoch_loss;
    }
    save_text(log.dump(2) + "\n", work / "train_log.json");
    result.artifacts.push_back(model_path);
  }

  if (wants("score")) {
    result.stages_run.push_back("score");
    detail::require_artifact(model_path, "train-ulm");
    detail::require_artifact(eval_tokens, "tokenize");
    const AnyModel model = load_model(model_path);
    CorpusScoringOptions opt;
    opt.dedup = cfg.dedup;
    opt.jobs = cfg.jobs;
    auto report = score_corpus(&model, read_manifest(eval_tokens), opt);
    report.header.config_hash = hash;
    report.header.seed = cfg.seed;
    report.header.generated_at = timestamp;
    // entries lost while tokenizing are skipped entries of the report too
    for (const auto& s : result.skipped) {
      report.skipped.push_back(s);
    }
    write_report(report, report_path);
    result.skipped = report.skipped;
    result.artifacts.push_back(report_path);
  }

  if (wants("eval")) {
    result.stages_run.push_back("eval");
    detail::require_artifact(report_path, "score");
    const auto report = read_report(report_path);
    std::optional<std::map<std::string, double>> reference;
    if (cfg.reference) {
      reference = read_reference_values(*cfg.reference);
    } else {
      std::map<std::string, double> from_manifest;
      for (const auto& e : eval.entries) {
        if (e.reference_metric) {
          from_manifest.emplace(e.id, *e.reference_metric);
        }
      }
      if (!from_manifest.empty()) {
        reference = std::move(from_manifest);
      }
    }
    AnalysisOptions aopt;
    aopt.bins = cfg.bins;
    aopt.bandwidth = cfg.bandwidth;
    const auto bundle = condition_report(report, reference, aopt);
    write_analysis(bundle, eval_dir, { hash, cfg.seed, timestamp }, &report, reference ? &*reference : nullptr);
    result.artifacts.push_back(eval_dir);
  }

  nlohmann::json stamp;
  stamp["config_hash"] = hash;
  stamp["seed"] = cfg.seed;
  stamp["config"] = to_json(cfg);
  stamp["stages"] = result.stages_run;
  stamp["skipped"] = result.skipped.size();
  stamp["generated_at"] = timestamp;
  save_text(stamp.dump(2) + "\n", work / "run.json");

  result.exit_status = result.skipped.empty() ? 0 : 2;
  return result;
}

} // namespace gibscore
