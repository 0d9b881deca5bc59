#include "biaslens/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "biaslens/cda.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/finetune.hpp"
#include "biaslens/http_backend.hpp"
#include "biaslens/metrics.hpp"
#include "biaslens/mock_backends.hpp"
#include "biaslens/scoring.hpp"
#include "biaslens/sendeb.hpp"
#include "biaslens/text.hpp"

namespace biaslens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << content;
  if (!out) throw UsageError("failed writing " + path.string());
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex_hash(std::string_view s) { return fmt::format("{:016x}", text::fnv1a(s)); }

template <typename F>
int guarded(const char* verb, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    std::cerr << "biaslens " << verb << ": error: " << e.what() << "\n";
    return kExitError;
  }
}

// --- backends --------------------------------------------------------------------

std::vector<AttributeTerm> attribute_terms(const AttributeLexicon& lexicon) {
  std::vector<AttributeTerm> out;
  const auto d = lexicon.arity();
  for (std::size_t t = 0; t < lexicon.tuples().size(); ++t) {
    for (std::size_t s = 0; s < d; ++s) {
      const auto& word = lexicon.tuples()[t][s];
      if (WordTokenizer::segment(word).size() != 1) continue;
      const double weight = 1.0 - 2.0 * static_cast<double>(s) / static_cast<double>(d - 1);
      const auto group = fmt::format("{}:{}", to_string(lexicon.bias_type()), t);
      out.push_back({word, weight, group});
      auto upper = word;
      upper.front() = static_cast<char>(std::toupper(static_cast<unsigned char>(upper.front())));
      if (upper != word) out.push_back({upper, weight, group});
    }
  }
  return out;
}

std::optional<AttributeLexicon> bias_lexicon(const BackendSpec& spec) {
  if (spec.bias_lexicon.empty()) return std::nullopt;
  const auto type = parse_bias_type(spec.bias_type);
  for (auto& lex : load_lexicons(spec.bias_lexicon)) {
    if (lex.bias_type() == type) return lex;
  }
  throw UsageError("lexicon " + spec.bias_lexicon + " has no " + spec.bias_type + " entries");
}

}  // namespace

json BackendSpec::to_json() const {
  return json{{"type", type},           {"kind", kind},
              {"model_id", model_id},   {"endpoint", endpoint},
              {"hidden_dim", hidden_dim}, {"seed", seed},
              {"bias_lexicon", bias_lexicon}, {"bias_type", bias_type},
              {"bias_strength", bias_strength}, {"bias_gain", bias_gain}};
}

BackendPtr make_backend(const BackendSpec& spec, const ParallelCorpus& corpus,
                        const std::vector<std::string>& extra_words) {
  if (spec.type == "remote") {
    if (spec.endpoint.empty()) throw UsageError("remote backend needs an endpoint");
    return std::make_shared<RemoteBackend>(spec.endpoint);
  }
  const auto kind = parse_model_kind(spec.kind);
  auto extra = extra_words;
  const auto lexicon = bias_lexicon(spec);
  std::vector<AttributeTerm> terms;
  if (lexicon) {
    terms = attribute_terms(*lexicon);
    for (const auto& t : terms) extra.push_back(t.word);
  }
  auto vocab = vocabulary_for(corpus, extra);
  auto id = [&](const char* fallback) { return spec.model_id.empty() ? std::string(fallback) : spec.model_id; };

  if (spec.type == "uniform") {
    return std::make_shared<UniformBackend>(std::move(vocab), kind, spec.hidden_dim, spec.seed,
                                            id("mock-uniform"));
  }
  if (spec.type == "table") {
    return TableBackend::random(std::move(vocab), kind, spec.seed, id("mock-table"));
  }
  if (spec.type == "linear-bias") {
    if (!lexicon) throw UsageError("linear-bias backend needs --bias-lexicon");
    LinearBiasConfig cfg;
    cfg.model_id = id("mock-linear-bias");
    cfg.kind = kind;
    cfg.hidden_dim = spec.hidden_dim;
    cfg.seed = spec.seed;
    cfg.attributes = std::move(terms);
    cfg.strength = spec.bias_strength;
    cfg.bias_gain = spec.bias_gain;
    return std::make_shared<LinearBiasBackend>(std::move(vocab), std::move(cfg));
  }
  throw UsageError("unknown backend type '" + spec.type + "'");
}

namespace {

// --- corpora -----------------------------------------------------------------------

struct LoadedCorpus {
  ParallelCorpus corpus;
  json sources = json::array();
  std::string id;
};

LoadedCorpus load_corpora(const std::vector<std::string>& paths, const std::string& format,
                          const std::string& default_language) {
  if (paths.empty()) throw UsageError("no corpus given");
  LoadedCorpus out;
  LoadOptions options;
  options.default_language = default_language;
  std::string id_material;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw UsageError("corpus file " + p + " does not exist");
    const auto content = read_file(p);
    auto loaded = load_pairs_from_string(content, parse_pair_format(format), options);
    json dropped = json::object();
    for (const auto& [label, n] : loaded.dropped) dropped[label] = n;
    out.sources.push_back({{"path", p},
                           {"fnv1a", hex_hash(content)},
                           {"rows_read", loaded.rows_read},
                           {"retained", loaded.retained},
                           {"dropped", dropped},
                           {"row_errors", loaded.row_errors.size()}});
    id_material += hex_hash(content);
    for (const auto& lang : loaded.corpus.languages()) {
      if (out.corpus.has_language(lang)) {
        throw UsageError("language " + lang + " appears in more than one corpus file");
      }
      out.corpus.add_slice(lang, loaded.corpus.slice(lang), loaded.corpus.excluded(lang));
    }
  }
  out.id = "corpus-" + hex_hash(id_material);
  return out;
}

// --- scoring with cache ------------------------------------------------------------

json run_to_json(const ScoreRun& run) {
  json skipped = json::array();
  for (const auto& s : run.skipped) {
    skipped.push_back({{"pair_id", s.pair_id}, {"language", s.language}, {"reason", s.reason}});
  }
  return json{{"scores", scores_to_jsonl(run.scores)}, {"skipped", skipped}, {"warnings", run.warnings}};
}

ScoreRun run_from_json(const json& j) {
  ScoreRun run;
  run.scores = scores_from_jsonl(j.at("scores").get<std::string>());
  for (const auto& s : j.at("skipped")) {
    run.skipped.push_back({s.at("pair_id").get<std::string>(), s.at("language").get<std::string>(),
                           s.at("reason").get<std::string>()});
  }
  run.warnings = j.at("warnings").get<std::vector<std::string>>();
  return run;
}

ScoreRun score_with_cache(const ParallelCorpus& corpus, const ModelBackend& backend,
                          const ScoringOptions& options, const std::string& cache_key) {
  const char* cache_dir = std::getenv("BIASLENS_CACHE");
  fs::path cache_file;
  if (cache_dir != nullptr && *cache_dir != '\0') {
    cache_file = fs::path(cache_dir) / ("scores-" + hex_hash(cache_key) + ".json");
    if (fs::exists(cache_file)) {
      try {
        spdlog::info("using cached scores {}", cache_file.string());
        return run_from_json(json::parse(read_file(cache_file)));
      } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable score cache {}: {}", cache_file.string(), e.what());
      }
    }
  }
  auto run = score_corpus(corpus, backend, options);
  if (!cache_file.empty()) write_file(cache_file, run_to_json(run).dump());
  return run;
}

/// Keeps scores whose pair id was scored in every language.
std::size_t keep_common_scores(std::vector<PairScore>& scores,
                               const std::vector<std::string>& languages) {
  std::map<std::string, std::size_t> seen;
  for (const auto& s : scores) ++seen[s.pair_id];
  const auto before = scores.size();
  std::erase_if(scores, [&](const PairScore& s) { return seen[s.pair_id] != languages.size(); });
  return before - scores.size();
}

// --- plotting ------------------------------------------------------------------------

std::string render_svg(const BiasReport& report) {
  const double bar = 28;
  const double gap = 40;
  const double height = 260;
  const double top = 40;
  double max_value = 1.0;
  for (const auto& [k, e] : report.entries) max_value = std::max(max_value, e.nbs);
  const std::size_t n_types = std::size(kAllBiasTypes);
  const double group_width = bar * static_cast<double>(n_types) + gap;
  const double width = 60 + group_width * static_cast<double>(report.languages.size());
  static const char* colors[] = {"#4C72B0", "#DD8452", "#55A868", "#C44E52"};

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n",
      width, height + top + 60);
  out += fmt::format("<text x=\"10\" y=\"20\" font-size=\"14\">{} (NBS x 100)</text>\n",
                     report.model_id);
  for (std::size_t li = 0; li < report.languages.size(); ++li) {
    const auto& lang = report.languages[li];
    const double x0 = 50 + group_width * static_cast<double>(li);
    for (std::size_t ti = 0; ti < n_types; ++ti) {
      auto it = report.entries.find({lang, kAllBiasTypes[ti]});
      if (it == report.entries.end()) continue;
      const double h = height * it->second.nbs / max_value;
      const double x = x0 + bar * static_cast<double>(ti);
      out += fmt::format(
          "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\">"
          "<title>{} {}: {:.2f}</title></rect>\n",
          x, top + height - h, bar - 4, h, colors[ti], lang, to_string(kAllBiasTypes[ti]),
          it->second.nbs);
    }
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", x0, top + height + 16,
                       language_name(lang));
  }
  for (std::size_t ti = 0; ti < n_types; ++ti) {
    const double x = 50 + 120 * static_cast<double>(ti);
    out += fmt::format("<rect x=\"{:.0f}\" y=\"{:.0f}\" width=\"10\" height=\"10\" fill=\"{}\"/>"
                       "<text x=\"{:.0f}\" y=\"{:.0f}\">{}</text>\n",
                       x, top + height + 30, colors[ti], x + 14, top + height + 39,
                       display_name(kAllBiasTypes[ti]));
  }
  return out + "</svg>\n";
}

json evaluate_config_json(const EvaluateConfig& c) {
  return json{{"corpus", c.corpora},
              {"format", c.format},
              {"default-language", c.default_language},
              {"languages", c.languages},
              {"backend", c.backend.type},
              {"kind", c.backend.kind},
              {"model-id", c.backend.model_id},
              {"endpoint", c.backend.endpoint},
              {"hidden-dim", c.backend.hidden_dim},
              {"seed", c.backend.seed},
              {"bias-lexicon", c.backend.bias_lexicon},
              {"bias-type", c.backend.bias_type},
              {"bias-strength", c.backend.bias_strength},
              {"bias-gain", c.backend.bias_gain},
              {"subspace", c.subspace},
              {"output-dir", c.output_dir},
              {"raw-causal", c.raw_causal},
              {"plot", c.plot}};
}

struct Evaluation {
  BiasReport report;
  ScoreRun run;
  json manifest;
  bool warned = false;
};

Evaluation evaluate(const EvaluateConfig& c, BackendPtr backend = nullptr) {
  auto loaded = load_corpora(c.corpora, c.format, c.default_language);
  const auto languages = c.languages.empty() ? loaded.corpus.languages() : c.languages;
  auto corpus = loaded.corpus.select(languages);
  const auto dropped_uncommon = corpus.restrict_to_common_ids();

  if (!backend) backend = make_backend(c.backend, corpus);
  std::string subspace_text;
  if (!c.subspace.empty()) {
    subspace_text = read_file(c.subspace);
    backend = debias_hook(backend, subspace_from_json(subspace_text));
  }

  ScoringOptions options;
  options.raw_causal_scores = c.raw_causal;
  const auto cache_key = c.backend.to_json().dump() + "|" + backend->model_id() + "|" +
                         subspace_text + "|" + std::to_string(c.raw_causal) + "|" +
                         to_pairs_jsonl(corpus);
  Evaluation ev;
  ev.run = score_with_cache(corpus, *backend, options, cache_key);
  auto scores = ev.run.scores;
  const auto dropped_unscored = keep_common_scores(scores, languages);

  ev.report = make_bias_report(backend->model_id(), scores, languages);
  ev.report.corpus_id = loaded.id;
  for (const auto& lang : languages) {
    const auto n = corpus.slice(lang).size();
    const auto scored = ev.report.normalization.n_per_language;
    ev.report.skipped[lang] = corpus.excluded(lang).size() + (n - scored);
  }
  ev.report.warnings.insert(ev.report.warnings.end(), ev.run.warnings.begin(), ev.run.warnings.end());
  ev.warned = !ev.run.warnings.empty();

  const auto& info = backend->info();
  ev.manifest = json{{"tool", "biaslens"},
                     {"version", kVersion},
                     {"verb", "evaluate"},
                     {"backend",
                      {{"model_id", info.model_id},
                       {"kind", to_string(info.kind)},
                       {"vocab_size", info.vocab_size},
                       {"hidden_dim", info.hidden_dim}}},
                     {"corpus", {{"id", loaded.id}, {"sources", loaded.sources}}},
                     {"languages", languages},
                     {"pairs_dropped_not_in_every_language", dropped_uncommon},
                     {"scores_dropped_not_scored_in_every_language", dropped_unscored},
                     {"pairs_skipped", ev.run.skipped.size()},
                     {"normalization",
                      {{"w_avg", ev.report.normalization.w_avg},
                       {"n_per_language", ev.report.normalization.n_per_language}}},
                     {"subspace", c.subspace},
                     {"warnings", ev.report.warnings}};
  return ev;
}

void write_reports(const fs::path& dir, const BiasReport& report) {
  for (const auto f : {ReportFormat::csv, ReportFormat::markdown, ReportFormat::json}) {
    write_file(dir / ("report." + file_extension(f)), render_report(report, f));
  }
}

}  // namespace

int cmd_evaluate(const EvaluateConfig& c) {
  return guarded("evaluate", [&] {
    if (c.output_dir.empty()) throw UsageError("--output-dir is required");
    const auto started = utc_now();
    auto ev = evaluate(c);
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    write_file(dir / "config.json", evaluate_config_json(c).dump(2) + "\n");
    write_file(dir / "scores.jsonl", scores_to_jsonl(ev.run.scores));
    write_reports(dir, ev.report);
    if (c.plot) write_file(dir / "report.svg", render_svg(ev.report));
    const int code = ev.warned ? kExitWarnings : kExitOk;
    ev.manifest["started_at"] = started;
    ev.manifest["finished_at"] = utc_now();
    ev.manifest["exit_code"] = code;
    write_file(dir / "manifest.json", ev.manifest.dump(2) + "\n");
    std::cout << render_report(ev.report, ReportFormat::markdown);
    return code;
  });
}

int cmd_augment(const AugmentConfig& c) {
  return guarded("augment", [&] {
    if (c.output.empty()) throw UsageError("--output is required");
    if (c.lexicon.empty()) throw UsageError("--lexicon is required");
    if (c.input.empty() == c.wikipedia.empty()) {
      throw UsageError("give exactly one of --input and --wikipedia");
    }
    auto lexicons = load_lexicons(c.lexicon);
    if (!c.bias_types.empty()) {
      std::set<BiasType> keep;
      for (const auto& t : c.bias_types) keep.insert(parse_bias_type(t));
      std::erase_if(lexicons, [&](const AttributeLexicon& l) { return !keep.count(l.bias_type()); });
      if (lexicons.empty()) throw UsageError("no lexicon matches the requested bias types");
    }

    const fs::path output(c.output);
    if (output.has_parent_path()) fs::create_directories(output.parent_path());
    json manifest{{"tool", "biaslens"}, {"version", kVersion}, {"verb", "augment"},
                  {"started_at", utc_now()}, {"lexicon", c.lexicon}};
    json lexicon_ids = json::array();
    for (const auto& l : lexicons) lexicon_ids.push_back(l.id());
    manifest["lexicon_ids"] = lexicon_ids;

    fs::path source = c.input;
    auto source_format = parse_stream_format(c.input_format);
    if (!c.wikipedia.empty()) {
      const fs::path sample_path = output.string() + ".sample.txt";
      std::ofstream sample(sample_path, std::ios::binary | std::ios::trunc);
      if (!sample) throw UsageError("cannot write " + sample_path.string());
      std::size_t sentences = 0;
      auto sink = [&](const Article& a) {
        for (const auto& s : split_sentences(a.text)) {
          sample << s << '\n';
          ++sentences;
        }
      };
      const auto format = parse_stream_format(c.wikipedia_format);
      SampleStats stats;
      if (c.exact) {
        stats = sample_wikipedia_exact(
            [&] {
              auto in = std::make_unique<std::ifstream>(c.wikipedia, std::ios::binary);
              if (!*in) throw UsageError("cannot open " + c.wikipedia);
              return std::unique_ptr<std::istream>(std::move(in));
            },
            format, c.fraction, c.seed, sink);
      } else {
        std::ifstream in(c.wikipedia, std::ios::binary);
        if (!in) throw UsageError("cannot open " + c.wikipedia);
        ArticleSource dump(in, format, c.wikipedia);
        stats = sample_wikipedia(dump, c.fraction, c.seed, sink);
      }
      sample.close();
      manifest["sample"] = {{"dump", c.wikipedia},
                            {"fraction", stats.fraction},
                            {"seed", stats.seed},
                            {"mode", c.exact ? "exact" : "hash"},
                            {"articles_seen", stats.seen},
                            {"articles_kept", stats.kept},
                            {"sentences", sentences},
                            {"sample_file", sample_path.string()}};
      source = sample_path;
      source_format = StreamFormat::text;
    }

    std::ifstream in(source, std::ios::binary);
    if (!in) throw UsageError("cannot open " + source.string());
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + output.string());
    LineSource lines(in, source_format, source.string());
    const auto stats = augment_corpus(lines, lexicons, [&](const AugmentedRecord& r) {
      out << to_jsonl(r) << '\n';
      if (!out) throw CorpusError("write failure at " + output.string() + " record " + std::to_string(r.seq));
    });
    out.close();
    manifest["input"] = source.string();
    manifest["output"] = output.string();
    manifest["corpus_id"] = "augmented-" + hex_hash(read_file(output));
    manifest["originals"] = stats.originals;
    manifest["counterfactuals"] = stats.counterfactuals;
    manifest["matched"] = stats.matched;
    manifest["finished_at"] = utc_now();
    write_file(output.string() + ".manifest.json", manifest.dump(2) + "\n");
    std::cout << fmt::format("{} originals, {} matched, {} counterfactuals -> {}\n",
                             stats.originals, stats.matched, stats.counterfactuals, output.string());
    return kExitOk;
  });
}

int cmd_subspace(const SubspaceConfig& c) {
  return guarded("subspace", [&] {
    if (c.output.empty()) throw UsageError("--output is required");
    if (c.templates.empty()) throw UsageError("--templates is required");
    if (c.lexicon.empty()) throw UsageError("--lexicon is required");
    const auto type = parse_bias_type(c.bias_type);
    std::optional<AttributeLexicon> lexicon;
    for (auto& l : load_lexicons(c.lexicon)) {
      if (l.bias_type() == type) lexicon = l;
    }
    if (!lexicon) throw UsageError("lexicon " + c.lexicon + " has no " + c.bias_type + " entries");

    std::ifstream in(c.templates, std::ios::binary);
    if (!in) throw UsageError("cannot open " + c.templates);
    LineSource lines(in, parse_stream_format(c.template_format), c.templates);
    const auto set = contextualize(*lexicon, lines, "templates-" + hex_hash(read_file(c.templates)));

    std::vector<std::string> words;
    for (const auto& slot : set.by_slot) {
      for (const auto& s : slot) {
        for (auto& w : WordTokenizer::segment(s)) words.push_back(std::move(w));
      }
    }
    auto backend = make_backend(c.backend, ParallelCorpus{}, words);
    const auto subspace = fit_subspace(set, *backend, c.k, parse_centering_mode(c.centering));
    save_subspace(subspace, c.output);
    std::cout << fmt::format("fitted {} direction(s) on {} examples; explained variance {:.4f} -> {}\n",
                             subspace.k(), set.n_examples(), subspace.explained_variance.front(),
                             c.output);
    return kExitOk;
  });
}

int cmd_compare(const CompareConfig& c) {
  return guarded("compare", [&] {
    if (c.baseline.empty() || c.treated.empty()) {
      throw UsageError("--baseline and at least one --treated are required");
    }
    const auto baseline = report_from_json(read_file(c.baseline));
    std::vector<ReductionReport> reductions;
    for (const auto& spec : c.treated) {
      const auto eq = spec.find('=');
      const auto method = eq == std::string::npos ? std::string("treated") : spec.substr(0, eq);
      const auto path = eq == std::string::npos ? spec : spec.substr(eq + 1);
      reductions.push_back(compute_reduction(baseline, report_from_json(read_file(path)), method));
    }
    const ReductionRenderOptions options{c.paper_sign};
    if (!c.output_dir.empty()) {
      const fs::path dir(c.output_dir);
      for (const auto f : {ReportFormat::csv, ReportFormat::markdown, ReportFormat::json}) {
        write_file(dir / ("reduction." + file_extension(f)), render_reductions(reductions, f, options));
      }
    }
    std::cout << render_reductions(reductions, parse_report_format(c.format), options);
    return kExitOk;
  });
}

namespace {

std::unique_ptr<Trainer> make_trainer(const std::string& name, double shrink_factor) {
  if (name == "identity") return std::make_unique<IdentityTrainer>();
  if (name == "shrink-bias") return std::make_unique<ShrinkBiasTrainer>(shrink_factor);
  if (name == "none") return nullptr;
  throw UsageError("unknown trainer '" + name + "'");
}

}  // namespace

int cmd_finetune(const FinetuneConfig& c) {
  return guarded("finetune", [&] {
    if (c.output_dir.empty()) throw UsageError("--output-dir is required");
    if (c.train_corpus.empty()) throw UsageError("--train-corpus is required");
    const auto method = parse_finetune_method(c.method);
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);

    EvaluateConfig eval;
    eval.corpora = c.eval_corpora;
    eval.format = c.eval_format;
    eval.default_language = c.default_language;
    eval.languages = c.languages;
    eval.backend = c.backend;

    ParallelCorpus vocab_corpus;
    if (!c.eval_corpora.empty()) {
      vocab_corpus = load_corpora(c.eval_corpora, c.eval_format, c.default_language).corpus;
    }
    BackendRegistry registry;
    auto base = make_backend(c.backend, vocab_corpus);
    registry.add(base->model_id(), base);

    CorpusRef corpus{c.corpus_id.empty() ? fs::path(c.train_corpus).filename().string() : c.corpus_id,
                     c.train_corpus, method == FinetuneMethod::cda};
    JobOverrides overrides;
    overrides.hidden_dropout = c.hidden_dropout;
    overrides.attention_dropout = c.attention_dropout;
    overrides.epochs = c.epochs;
    overrides.learning_rate = c.learning_rate;
    overrides.seed = c.seed;
    overrides.max_steps = c.max_steps;
    const auto job = build_job(method, base->model_id(), corpus, overrides);

    auto trainer = make_trainer(c.trainer, c.shrink_factor);
    JobLog log(dir / "jobs.jsonl");
    RunJobOptions options;
    options.log = &log;
    JobOutcome outcome;
    try {
      outcome = run_job(job, trainer.get(), registry, options);
    } catch (const JobError& e) {
      write_file(dir / "job.json", e.manifest().dump(2) + "\n");
      throw;
    }
    write_file(dir / "job.json", outcome.manifest.dump(2) + "\n");
    std::cout << "trained " << outcome.model_id << "\n";

    if (c.eval_corpora.empty()) return kExitOk;
    auto before = evaluate(eval, base);
    auto after = evaluate(eval, registry.get(outcome.model_id));
    after.report.model_id = outcome.model_id;
    write_reports(dir / "baseline", before.report);
    write_reports(dir / "treated", after.report);
    const std::vector<ReductionReport> reductions{
        compute_reduction(before.report, after.report, to_string(method))};
    for (const auto f : {ReportFormat::csv, ReportFormat::markdown, ReportFormat::json}) {
      write_file(dir / ("reduction." + file_extension(f)), render_reductions(reductions, f));
    }
    std::cout << render_reductions(reductions, ReportFormat::markdown);
    return before.warned || after.warned ? kExitWarnings : kExitOk;
  });
}

// --- command line ----------------------------------------------------------------------

namespace {

/// Flat JSON object whose keys are long option names.
/// Option tokens for a flat JSON object of long option names. Keys already
/// given on the command line are skipped so explicit flags win.
std::vector<std::string> config_tokens(const std::string& path, const std::vector<std::string>& explicit_args) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON config " + path, "byte " + std::to_string(e.byte));
  }
  if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
  auto given = [&](const std::string& flag) {
    return std::any_of(explicit_args.begin(), explicit_args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
  };
  auto scalar = [&](const std::string& key, const json& v) -> std::string {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
    throw UsageError("config key " + key + " must hold a scalar or a list of scalars");
  };
  std::vector<std::string> out;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (value.is_null() || given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) out.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& v : value) {
        out.push_back(flag);
        out.push_back(scalar(key, v));
      }
    } else {
      out.push_back(flag);
      out.push_back(scalar(key, value));
    }
  }
  return out;
}

/// Replaces every `--config FILE` with the options the file holds.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::vector<std::string> files;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      files.push_back(args[++i]);
    } else if (args[i].rfind("--config=", 0) == 0) {
      files.push_back(args[i].substr(9));
    } else {
      out.push_back(args[i]);
    }
  }
  const auto explicit_args = out;
  for (const auto& f : files) {
    const auto extra = config_tokens(f, explicit_args);
    out.insert(out.end(), extra.begin(), extra.end());
  }
  return out;
}

void add_config(CLI::App* app) {
  // Expanded before parsing; registered for --help only.
  app->add_option("--config", "JSON file of option values (keys are long option names)");
}

void add_backend_options(CLI::App* app, BackendSpec& spec) {
  app->add_option("--backend", spec.type, "uniform | table | linear-bias | remote")
      ->capture_default_str();
  app->add_option("--kind", spec.kind, "masked | causal")->capture_default_str();
  app->add_option("--model-id", spec.model_id, "model id of a mock backend");
  app->add_option("--endpoint", spec.endpoint, "base URL of a remote backend");
  app->add_option("--hidden-dim", spec.hidden_dim)->capture_default_str();
  app->add_option("--seed", spec.seed, "seed of mock backends")->capture_default_str();
  app->add_option("--bias-lexicon", spec.bias_lexicon, "lexicon driving the linear-bias mock");
  app->add_option("--bias-type", spec.bias_type)->capture_default_str();
  app->add_option("--bias-strength", spec.bias_strength)->capture_default_str();
  app->add_option("--bias-gain", spec.bias_gain)->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Multilingual social-bias evaluation and debiasing toolkit", "biaslens"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error")->capture_default_str();

  EvaluateConfig evaluate_cfg;
  auto* ev = app.add_subcommand("evaluate", "score a pair corpus and write a bias report");
  add_config(ev);
  ev->add_option("--corpus", evaluate_cfg.corpora, "pair corpus file (repeatable)")->required();
  ev->add_option("--format", evaluate_cfg.format, "crowspairs-csv | pairs-jsonl")->capture_default_str();
  ev->add_option("--default-language", evaluate_cfg.default_language)->capture_default_str();
  ev->add_option("--languages", evaluate_cfg.languages, "language set of the run")->delimiter(',');
  add_backend_options(ev, evaluate_cfg.backend);
  ev->add_option("--subspace", evaluate_cfg.subspace, "bias subspace file to project out");
  ev->add_option("--output-dir", evaluate_cfg.output_dir)->required();
  ev->add_flag("--raw-causal", evaluate_cfg.raw_causal, "sum raw LM-head scores for causal models");
  ev->add_flag("--plot", evaluate_cfg.plot, "also write report.svg");

  AugmentConfig augment_cfg;
  auto* au = app.add_subcommand("augment", "counterfactual data augmentation");
  add_config(au);
  au->add_option("--input", augment_cfg.input, "sentence stream");
  au->add_option("--input-format", augment_cfg.input_format, "text | jsonl")->capture_default_str();
  au->add_option("--wikipedia", augment_cfg.wikipedia, "article dump to sample first");
  au->add_option("--wikipedia-format", augment_cfg.wikipedia_format, "jsonl | text")->capture_default_str();
  au->add_option("--fraction", augment_cfg.fraction)->capture_default_str();
  au->add_option("--seed", augment_cfg.seed)->capture_default_str();
  au->add_flag("--exact", augment_cfg.exact, "sample exactly round(fraction * N) articles");
  au->add_option("--lexicon", augment_cfg.lexicon)->required();
  au->add_option("--bias-types", augment_cfg.bias_types)->delimiter(',');
  au->add_option("--output", augment_cfg.output)->required();

  SubspaceConfig subspace_cfg;
  auto* su = app.add_subcommand("subspace", "fit a bias subspace");
  add_config(su);
  su->add_option("--templates", subspace_cfg.templates)->required();
  su->add_option("--template-format", subspace_cfg.template_format)->capture_default_str();
  su->add_option("--lexicon", subspace_cfg.lexicon)->required();
  su->add_option("--target", subspace_cfg.bias_type, "bias type of the subspace")->capture_default_str();
  add_backend_options(su, subspace_cfg.backend);
  su->add_option("--k", subspace_cfg.k)->capture_default_str();
  su->add_option("--centering", subspace_cfg.centering, "per-example | per-slot")->capture_default_str();
  su->add_option("--output", subspace_cfg.output)->required();

  CompareConfig compare_cfg;
  auto* co = app.add_subcommand("compare", "relative reduction between reports");
  add_config(co);
  co->add_option("--baseline", compare_cfg.baseline)->required();
  co->add_option("--treated", compare_cfg.treated, "[method=]report.json (repeatable)")->required();
  co->add_flag("--paper-sign", compare_cfg.paper_sign, "print improvements as negative numbers");
  co->add_option("--format", compare_cfg.format)->capture_default_str();
  co->add_option("--output-dir", compare_cfg.output_dir);

  FinetuneConfig finetune_cfg;
  auto* ft = app.add_subcommand("finetune", "run a fine-tuning job through a trainer");
  add_config(ft);
  ft->add_option("--method", finetune_cfg.method, "cda | dropout")->capture_default_str();
  ft->add_option("--train-corpus", finetune_cfg.train_corpus)->required();
  ft->add_option("--corpus-id", finetune_cfg.corpus_id);
  ft->add_option("--trainer", finetune_cfg.trainer, "identity | shrink-bias | none")->capture_default_str();
  ft->add_option("--shrink-factor", finetune_cfg.shrink_factor)->capture_default_str();
  ft->add_option("--hidden-dropout", finetune_cfg.hidden_dropout);
  ft->add_option("--attention-dropout", finetune_cfg.attention_dropout);
  ft->add_option("--epochs", finetune_cfg.epochs);
  ft->add_option("--learning-rate", finetune_cfg.learning_rate);
  ft->add_option("--train-seed", finetune_cfg.seed);
  ft->add_option("--max-steps", finetune_cfg.max_steps);
  add_backend_options(ft, finetune_cfg.backend);
  ft->add_option("--eval-corpus", finetune_cfg.eval_corpora);
  ft->add_option("--eval-format", finetune_cfg.eval_format)->capture_default_str();
  ft->add_option("--default-language", finetune_cfg.default_language)->capture_default_str();
  ft->add_option("--languages", finetune_cfg.languages)->delimiter(',');
  ft->add_option("--output-dir", finetune_cfg.output_dir)->required();

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    args = expand_config(args);
  } catch (const Error& e) {
    std::cerr << "biaslens: error: " << e.what() << "\n";
    return kExitError;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (*ev) return cmd_evaluate(evaluate_cfg);
  if (*au) return cmd_augment(augment_cfg);
  if (*su) return cmd_subspace(subspace_cfg);
  if (*co) return cmd_compare(compare_cfg);
  if (*ft) return cmd_finetune(finetune_cfg);
  return kExitError;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace biaslens::cli
