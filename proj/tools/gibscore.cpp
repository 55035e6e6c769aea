// gibscore command-line entry point.
//
// Exit status: 0 success, 1 usage or validation failure, 2 runtime or data
// failure (including runs that skipped some entries).

#include "gibscore/gibscore.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <ctime>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace gibscore;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

std::string utc_timestamp()
{
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string settings_hash(const nlohmann::json& settings)
{
  return hex64(fnv1a(settings.dump()));
}

int report_skipped(const std::vector<SkippedEntry>& skipped)
{
  for (const auto& s : skipped) {
    std::cerr << "skipped " << s.id << ": " << s.reason << '\n';
  }
  if (!skipped.empty()) {
    std::cerr << skipped.size() << " entr" << (skipped.size() == 1 ? "y" : "ies") << " skipped\n";
    return kExitRuntime;
  }
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s)
{
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct CodebookArgs
{
  std::string manifest, out;
  std::uint32_t k = kDefaultCodebookSize;
  std::uint32_t max_iter = 100;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

int cmd_train_codebook(const CodebookArgs& a, unsigned jobs)
{
  const auto manifest = read_manifest(a.manifest);
  std::vector<FeatureMatrix> corpus;
  for (const auto& e : manifest.entries) {
    if (e.kind != PayloadKind::features) {
      throw UsageError("entry '" + e.id + "' is not a feature payload");
    }
    check_payload_kind(e);
    corpus.push_back(read_features(e.payload_path));
  }
  const auto cb = train_codebook(corpus, { a.k, a.max_iter, a.tol, a.seed, jobs });
  write_codebook(cb, a.out);
  std::cout << "codebook k=" << cb.k << " dim=" << cb.dim << " inertia=" << detail::format_real(cb.inertia)
            << " iterations=" << cb.inertia_history.size() << " -> " << a.out << '\n';
  return kExitOk;
}

struct TokenizeArgs
{
  std::string codebook, manifest, out_dir;
  bool dedup = false;
};

int cmd_tokenize(const TokenizeArgs& a, unsigned jobs)
{
  std::optional<Codebook> cb;
  if (!a.codebook.empty()) {
    cb = read_codebook(a.codebook);
  }
  std::vector<SkippedEntry> skipped;
  const auto out = tokenize_manifest(read_manifest(a.manifest), cb ? &*cb : nullptr, a.out_dir, a.dedup, jobs, skipped);
  write_manifest(out, fs::path(a.out_dir) / "manifest.jsonl");
  std::cout << out.entries.size() << " entries -> " << (fs::path(a.out_dir) / "manifest.jsonl").string() << '\n';
  return report_skipped(skipped);
}

struct TrainUlmArgs
{
  std::string backend = "ngram", manifest, out;
  std::uint32_t order = 3;
  double smoothing_k = 0.1;
  bool dedup = false;
  RecurrentConfig rnn;
};

int cmd_train_ulm(const TrainUlmArgs& a)
{
  const auto corpus = load_token_corpus(read_manifest(a.manifest), a.dedup);
  if (a.backend == "ngram") {
    if (!(a.smoothing_k > 0.0)) {
      throw UsageError("--smoothing-k must be positive");
    }
    write_ngram(train_ngram(corpus, a.order, a.smoothing_k), a.out);
    std::cout << "ngram order=" << a.order << " -> " << a.out << '\n';
    return kExitOk;
  }
  const auto trained = train_recurrent(corpus, a.rnn);
  write_recurrent(trained.model, a.out);
  for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
    std::cout << "epoch " << e << " loss " << detail::format_real(trained.epoch_loss[e]) << '\n';
  }
  std::cout << "rnn -> " << a.out << '\n';
  return kExitOk;
}

struct ScoreArgs
{
  std::string model, manifest, out, codebook;
  bool external = false;
  bool dedup = false;
};

int cmd_score(const ScoreArgs& a, unsigned jobs)
{
  if (a.model.empty() == !a.external) {
    throw UsageError("give exactly one of --model or --external");
  }
  std::optional<AnyModel> model;
  if (!a.model.empty()) {
    model = load_model(a.model);
  }
  std::optional<Codebook> cb;
  if (!a.codebook.empty()) {
    cb = read_codebook(a.codebook);
  }
  CorpusScoringOptions opt;
  opt.dedup = a.dedup;
  opt.codebook = cb ? &*cb : nullptr;
  opt.jobs = jobs;
  auto report = score_corpus(model ? &*model : nullptr, read_manifest(a.manifest), opt);
  report.header.config_hash = settings_hash({ { "model", a.model },
                                              { "external", a.external },
                                              { "manifest", a.manifest },
                                              { "codebook", a.codebook },
                                              { "dedup", a.dedup } });
  report.header.generated_at = utc_timestamp();
  write_report(report, a.out);
  for (const auto& s : report.summary()) {
    std::cout << s.condition << "\tn=" << s.count << "\tmean=" << detail::format_real(s.mean)
              << "\tsd=" << detail::format_real(s.stddev) << '\n';
  }
  return report_skipped(report.skipped);
}

// ---------------------------------------------------------------------------
// error-rate

struct ErrorRateArgs
{
  std::string ref, hyp, unit = "word", out;
};

struct Utterance
{
  std::string id;
  std::string condition;
  std::vector<std::string> words;
  std::vector<Token> tokens;
};

std::vector<Utterance> load_side(const std::string& path, const std::string& unit)
{
  std::vector<Utterance> out;
  if (unit == "token") {
    for (const auto& e : read_manifest(path).entries) {
      if (e.kind != PayloadKind::tokens) {
        throw ValidationError(path + ": entry '" + e.id + "' is not a token payload");
      }
      check_payload_kind(e);
      out.push_back({ e.id, e.condition, {}, read_tokens(e.payload_path).tokens });
    }
    return out;
  }
  for (auto& [id, text] : read_transcripts(path)) {
    out.push_back({ id, {}, unit == "word" ? normalize_words(text) : split_symbols(text), {} });
  }
  return out;
}

int cmd_error_rate(const ErrorRateArgs& a)
{
  const auto refs = load_side(a.ref, a.unit);
  const auto hyps = load_side(a.hyp, a.unit);
  std::map<std::string, const Utterance*> hyp_by_id;
  for (const auto& h : hyps) {
    if (!hyp_by_id.emplace(h.id, &h).second) {
      throw ValidationError(a.hyp + ": duplicate id '" + h.id + "'");
    }
  }

  using nlohmann::json;
  std::ostringstream out;
  out << json{ { "type", "header" }, { "unit", a.unit }, { "reference", a.ref }, { "hypothesis", a.hyp } }.dump()
      << '\n';
  std::uint64_t errors = 0, total = 0;
  std::size_t pairs = 0;
  std::vector<std::string> unmatched;
  std::map<std::string, bool> hyp_used;
  for (const auto& r : refs) {
    auto it = hyp_by_id.find(r.id);
    if (it == hyp_by_id.end()) {
      unmatched.push_back(r.id);
      continue;
    }
    hyp_used[r.id] = true;
    const auto res = a.unit == "token" ? align(r.tokens, it->second->tokens) : align(r.words, it->second->words);
    errors += res.distance();
    total += res.reference_length;
    ++pairs;
    json rec = { { "type", "record" },
                 { "id", r.id },
                 { "substitutions", res.substitutions },
                 { "deletions", res.deletions },
                 { "insertions", res.insertions },
                 { "hits", res.hits },
                 { "reference_length", res.reference_length },
                 { "error_rate", res.defined ? json(res.error_rate) : json(nullptr) } };
    if (!r.condition.empty()) {
      rec["condition"] = r.condition;
    }
    out << rec.dump() << '\n';
  }
  for (const auto& h : hyps) {
    if (!hyp_used.count(h.id)) {
      unmatched.push_back(h.id);
    }
  }
  if (total == 0) {
    throw UndefinedError("error rate undefined: every matched reference is empty");
  }
  const double pooled = static_cast<double>(errors) / static_cast<double>(total);
  out << json{ { "type", "pooled" },
               { "error_rate", pooled },
               { "total_errors", errors },
               { "total_reference", total },
               { "pairs", pairs },
               { "unmatched_ids", unmatched } }
           .dump()
      << '\n';
  save_text(out.str(), a.out);
  std::cout << "pooled " << a.unit << " error rate " << detail::format_real(pooled) << " over " << pairs
            << " pairs\n";
  if (!unmatched.empty()) {
    std::cerr << unmatched.size() << " id(s) present on one side only\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analysis

struct EvalArgs
{
  std::string scores, reference, out;
  std::size_t bins = 20;
  double bandwidth = 0.0;
};

int cmd_eval(const EvalArgs& a, bool with_reference)
{
  const auto report = read_report(a.scores);
  std::optional<std::map<std::string, double>> reference;
  if (with_reference) {
    reference = read_reference_values(a.reference);
  }
  AnalysisOptions opt;
  opt.bins = a.bins;
  if (a.bandwidth > 0.0) {
    opt.bandwidth = a.bandwidth;
  }
  const auto bundle = condition_report(report, reference, opt);
  AnalysisStamp stamp{ report.header.config_hash, report.header.seed, utc_timestamp() };
  write_analysis(bundle, a.out, stamp, &report, reference ? &*reference : nullptr);

  for (const auto& c : bundle.conditions) {
    std::cout << c.condition << "\tn=" << c.scores.size() << "\tmean=" << detail::format_real(c.mean);
    if (c.density) {
      std::cout << "\tmode=" << detail::format_real(c.density->mode());
    }
    if (c.correlation) {
      std::cout << "\t|PCC|=" << detail::format_real(std::abs(c.correlation->pcc))
                << "\t|SRCC|=" << detail::format_real(std::abs(c.correlation->srcc));
    }
    std::cout << '\n';
  }
  if (with_reference) {
    if (bundle.pooled) {
      std::cout << "pooled\tn=" << bundle.pooled->n << "\t|PCC|=" << detail::format_real(std::abs(bundle.pooled->pcc))
                << "\t|SRCC|=" << detail::format_real(std::abs(bundle.pooled->srcc)) << '\n';
    } else {
      std::cerr << "pooled correlation unavailable: " << bundle.pooled_note << '\n';
    }
    if (!bundle.unmatched_score_ids.empty() || !bundle.unmatched_reference_ids.empty()) {
      std::cerr << bundle.unmatched_score_ids.size() << " score id(s) and " << bundle.unmatched_reference_ids.size()
                << " reference id(s) unmatched\n";
    }
    if (bundle.matched == 0) {
      return kExitRuntime;
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunArgs
{
  std::string config, stages, workdir;
  std::optional<std::uint64_t> seed;
};

int cmd_run(const RunArgs& a, std::optional<unsigned> jobs)
{
  auto cfg = load_config(a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.rnn.seed = *a.seed;
  }
  if (!a.workdir.empty()) {
    cfg.workdir = a.workdir;
  }
  if (jobs) {
    cfg.jobs = *jobs;
  }
  const auto result = run_pipeline(cfg, split_list(a.stages), utc_timestamp());
  for (const auto& n : result.notes) {
    std::cerr << n << '\n';
  }
  std::cout << "stages:";
  for (const auto& s : result.stages_run) {
    std::cout << ' ' << s;
  }
  std::cout << "\nconfig hash " << config_hash(cfg) << ", workdir " << cfg.workdir.string() << '\n';
  report_skipped(result.skipped);
  return result.exit_status;
}

int cmd_check(const std::vector<std::string>& files)
{
  int failures = 0;
  for (const auto& f : files) {
    try {
      const fs::path p(f);
      std::string what;
      if (p.extension() == ".jsonl") {
        const auto m = read_manifest(p);
        for (const auto& e : m.entries) {
          check_payload_kind(e);
        }
        what = "manifest, " + std::to_string(m.entries.size()) + " entries";
      } else {
        switch (probe_kind(p)) {
          case PayloadKind::features: {
            const auto m = read_features(p);
            what = "features " + std::to_string(m.frame_count) + "x" + std::to_string(m.dim);
            break;
          }
          case PayloadKind::tokens: {
            const auto s = read_tokens(p);
            what = "tokens length " + std::to_string(s.tokens.size()) + " vocab " + std::to_string(s.vocab_size);
            break;
          }
          case PayloadKind::logits: {
            const auto r = read_logits(p);
            what = "logits " + std::to_string(r.step_count) + "x" + std::to_string(r.vocab_size);
            break;
          }
        }
      }
      std::cout << "OK\t" << f << '\t' << what << '\n';
    } catch (const Error& e) {
      ++failures;
      std::cout << "FAIL\t" << f << '\t' << e.what() << '\n';
    }
  }
  return failures == 0 ? kExitOk : kExitUsage;
}

int cmd_make_fixture(const std::string& out_dir, const synthetic::FixtureOptions& opt)
{
  synthetic::write_fixture(out_dir, opt);
  std::cout << "fixture -> " << out_dir << '\n';
  return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{ "gibscore: unit-language-model perplexity scoring and evaluation" };
  app.require_subcommand(1);
  app.set_version_flag("--version", "gibscore 0.1.0");

  unsigned jobs_value = 0;
  auto add_jobs = [&](CLI::App* sub) {
    return sub->add_option("-j,--jobs", jobs_value, "Worker threads (default: available parallelism)")
      ->check(CLI::PositiveNumber);
  };
  auto jobs = [&]() { return jobs_value == 0 ? default_jobs() : jobs_value; };

  CodebookArgs cb;
  auto* train_codebook_cmd = app.add_subcommand("train-codebook", "Learn a k-means codebook from feature payloads");
  train_codebook_cmd->add_option("--manifest", cb.manifest, "Manifest of feature (GIBF) entries")->required();
  train_codebook_cmd->add_option("--out", cb.out, "Destination codebook file (.gibc)")->required();
  train_codebook_cmd->add_option("--k", cb.k, "Number of centroids")->capture_default_str()->check(CLI::PositiveNumber);
  train_codebook_cmd->add_option("--max-iter", cb.max_iter, "Maximum Lloyd iterations")->capture_default_str();
  train_codebook_cmd->add_option("--tol", cb.tol, "Stop when relative inertia improvement falls below this")
    ->capture_default_str();
  train_codebook_cmd->add_option("--seed", cb.seed, "Seed for k-means++ initialization")->capture_default_str();
  add_jobs(train_codebook_cmd);

  TokenizeArgs tk;
  auto* tokenize_cmd = app.add_subcommand("tokenize", "Quantize feature payloads into token files");
  tokenize_cmd->add_option("--codebook", tk.codebook, "Codebook file (required when the manifest has features)");
  tokenize_cmd->add_option("--manifest", tk.manifest, "Input manifest")->required();
  tokenize_cmd->add_option("--out-dir", tk.out_dir, "Directory for <id>.gibt files and manifest.jsonl")->required();
  tokenize_cmd->add_flag("--dedup", tk.dedup, "Collapse runs of repeated tokens");
  add_jobs(tokenize_cmd);

  TrainUlmArgs ulm;
  auto* train_ulm_cmd = app.add_subcommand("train-ulm", "Train a unit language model on token payloads");
  train_ulm_cmd->add_option("--backend", ulm.backend, "Model family")
    ->check(CLI::IsMember({ "ngram", "rnn" }))
    ->capture_default_str();
  train_ulm_cmd->add_option("--manifest", ulm.manifest, "Manifest of token (GIBT) entries")->required();
  train_ulm_cmd->add_option("--out", ulm.out, "Destination model file (.gibn or .gibr)")->required();
  train_ulm_cmd->add_option("--order", ulm.order, "n-gram order")->capture_default_str()->check(CLI::PositiveNumber);
  train_ulm_cmd->add_option("--smoothing-k", ulm.smoothing_k, "Add-k smoothing constant")->capture_default_str();
  train_ulm_cmd->add_flag("--dedup", ulm.dedup, "Deduplicate training sequences");
  train_ulm_cmd->add_option("--epochs", ulm.rnn.epochs, "rnn: training epochs")->capture_default_str();
  train_ulm_cmd->add_option("--embed-dim", ulm.rnn.embed_dim, "rnn: embedding size")->capture_default_str();
  train_ulm_cmd->add_option("--hidden-dim", ulm.rnn.hidden_dim, "rnn: LSTM hidden size")->capture_default_str();
  train_ulm_cmd->add_option("--batch-size", ulm.rnn.batch_size, "rnn: sequences per update")->capture_default_str();
  train_ulm_cmd->add_option("--lr", ulm.rnn.learning_rate, "rnn: Adam learning rate")->capture_default_str();
  train_ulm_cmd->add_option("--clip", ulm.rnn.clip_norm, "rnn: global gradient-norm clip")->capture_default_str();
  train_ulm_cmd->add_option("--seed", ulm.rnn.seed, "rnn: seed for initialization and batch order")
    ->capture_default_str();
  add_jobs(train_ulm_cmd);

  ScoreArgs sc;
  auto* score_cmd = app.add_subcommand("score", "Score manifest entries by log-perplexity (nats/token)");
  auto* model_opt = score_cmd->add_option("--model", sc.model, "Trained model file");
  auto* external_opt = score_cmd->add_flag("--external", sc.external, "Score stored logits (GIBL) entries");
  model_opt->excludes(external_opt);
  score_cmd->add_option("--manifest", sc.manifest, "Manifest to score")->required();
  score_cmd->add_option("--codebook", sc.codebook, "Codebook for feature entries");
  score_cmd->add_flag("--dedup", sc.dedup, "Deduplicate token sequences before scoring");
  score_cmd->add_option("--out", sc.out, "Report path; writes <stem>.jsonl and <stem>.tsv")->required();
  add_jobs(score_cmd);

  ErrorRateArgs er;
  auto* error_rate_cmd = app.add_subcommand("error-rate", "Edit-distance error rates between references and hypotheses");
  error_rate_cmd->add_option("--ref-manifest", er.ref, "Reference transcripts (word/phone) or token manifest (token)")
    ->required();
  error_rate_cmd->add_option("--hyp-manifest", er.hyp, "Hypothesis transcripts or token manifest")->required();
  error_rate_cmd->add_option("--unit", er.unit, "Symbol unit")
    ->check(CLI::IsMember({ "word", "phone", "token" }))
    ->capture_default_str();
  error_rate_cmd->add_option("--out", er.out, "Output JSON Lines file")->required();
  add_jobs(error_rate_cmd);

  EvalArgs ec;
  auto* correlate_cmd = app.add_subcommand("eval-correlate", "Correlate scores with a per-utterance reference metric");
  correlate_cmd->add_option("--scores", ec.scores, "Score report (.jsonl)")->required();
  correlate_cmd->add_option("--reference", ec.reference,
                            "JSON Lines with id and reference_metric, error_rate or value")
    ->required();
  correlate_cmd->add_option("--out", ec.out, "Output directory")->required();
  correlate_cmd->add_option("--bins", ec.bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  correlate_cmd->add_option("--bandwidth", ec.bandwidth, "KDE bandwidth (default: Silverman's rule)");
  add_jobs(correlate_cmd);

  EvalArgs ed;
  auto* distributions_cmd = app.add_subcommand("eval-distributions", "Per-condition histograms and densities");
  distributions_cmd->add_option("--scores", ed.scores, "Score report (.jsonl)")->required();
  distributions_cmd->add_option("--out", ed.out, "Output directory")->required();
  distributions_cmd->add_option("--bins", ed.bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  distributions_cmd->add_option("--bandwidth", ed.bandwidth, "KDE bandwidth (default: Silverman's rule)");
  add_jobs(distributions_cmd);

  RunArgs run;
  std::uint64_t run_seed = 0;
  auto* run_cmd = app.add_subcommand("run", "Run the pipeline described by a config file");
  run_cmd->add_option("--config", run.config, "Pipeline config (JSON)")->required();
  run_cmd->add_option("--stages", run.stages, "Comma-separated subset of codebook,tokenize,train-ulm,score,eval");
  auto* seed_opt = run_cmd->add_option("--seed", run_seed, "Override the config seed");
  run_cmd->add_option("--workdir", run.workdir, "Override the workdir (else config, then $GIBSCORE_WORKDIR)");
  add_jobs(run_cmd);

  std::vector<std::string> check_files;
  auto* check_cmd = app.add_subcommand("check", "Validate interchange files and manifests");
  check_cmd->add_option("files", check_files, "GIBF/GIBT/GIBL files or .jsonl manifests")->required();
  add_jobs(check_cmd);

  std::string fixture_dir;
  synthetic::FixtureOptions fx;
  auto* fixture_cmd = app.add_subcommand("make-fixture", "Write the synthetic grammar fixture");
  fixture_cmd->add_option("--out-dir", fixture_dir, "Destination directory")->required();
  fixture_cmd->add_option("--seed", fx.seed, "Fixture seed")->capture_default_str();
  fixture_cmd->add_option("--vocab", fx.vocab, "Grammar symbols")->capture_default_str();
  fixture_cmd->add_option("--dim", fx.dim, "Feature dimension")->capture_default_str();
  fixture_cmd->add_option("--train", fx.train_count, "Training utterances")->capture_default_str();
  fixture_cmd->add_option("--clean", fx.clean_count, "Clean evaluation utterances")->capture_default_str();
  fixture_cmd->add_option("--gibberish", fx.gibberish_count, "Shuffled evaluation utterances")->capture_default_str();
  add_jobs(fixture_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_codebook_cmd) {
      return cmd_train_codebook(cb, jobs());
    }
    if (*tokenize_cmd) {
      return cmd_tokenize(tk, jobs());
    }
    if (*train_ulm_cmd) {
      return cmd_train_ulm(ulm);
    }
    if (*score_cmd) {
      return cmd_score(sc, jobs());
    }
    if (*error_rate_cmd) {
      return cmd_error_rate(er);
    }
    if (*correlate_cmd) {
      return cmd_eval(ec, true);
    }
    if (*distributions_cmd) {
      return cmd_eval(ed, false);
    }
    if (*run_cmd) {
      if (*seed_opt) {
        run.seed = run_seed;
      }
      return cmd_run(run, jobs_value == 0 ? std::nullopt : std::optional<unsigned>(jobs_value));
    }
    if (*check_cmd) {
      return cmd_check(check_files);
    }
    if (*fixture_cmd) {
      return cmd_make_fixture(fixture_dir, fx);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
