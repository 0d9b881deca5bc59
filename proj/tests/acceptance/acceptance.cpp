// Acceptance suite: one PASS/FAIL line per criterion.
//
// Exit status: 0 when every criterion passes, 1 when any criterion fails on its
// merits, 77 when the only failures are inputs that are not present locally
// (reported to CTest as skipped).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "biaslens/cda.hpp"
#include "biaslens/cli.hpp"
#include "biaslens/corpus.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/finetune.hpp"
#include "biaslens/metrics.hpp"
#include "biaslens/mock_backends.hpp"
#include "biaslens/scoring.hpp"
#include "biaslens/sendeb.hpp"

using namespace biaslens;
namespace fs = std::filesystem;

namespace {

constexpr int kExitUnavailable = 77;

// Tolerances and limits.
constexpr double kScaleRelTol = 1e-12;
constexpr double kOrthoTol = 1e-8;
constexpr double kPcaMinCos = 0.99;
constexpr double kPcaSnr = 5.0;
constexpr double kDebiasRatio = 1e-6;
constexpr double kMinReduction = 99.9;
constexpr double kInverseTol = 0.005;
constexpr std::size_t kRetainedPairs = 1042;

struct Outcome {
  bool pass = false;
  std::string detail;
  bool unavailable = false;
};

struct Criterion {
  int number;
  std::string name;
  double limit_seconds;  // 0 = untimed
  std::function<Outcome()> run;
};

fs::path source_dir() { return BIASLENS_SOURCE_DIR; }

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / fmt::format("biaslens-acc-{}-{:x}", tag, rd());
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  fs::path operator/(const std::string& n) const { return path_ / n; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- 1 ---------------------------------------------------------------------

/// Sum of table entries over unchanged positions, written out independently of
/// the scorer: each position j contributes log T[token j-1][token j].
double brute_force_ps(const TableBackend& b, const std::vector<std::string>& tokens,
                      const std::vector<std::size_t>& unchanged) {
  const auto& v = dynamic_cast<const WordTokenizer&>(b.tokenizer()).vocabulary();
  double total = 0.0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (std::find(unchanged.begin(), unchanged.end(), j) == unchanged.end()) continue;
    const TokenId prev = j == 0 ? Vocabulary::kBos : v.id_of(tokens[j - 1]);
    total += b.log_prob(prev, v.id_of(tokens[j]));
  }
  return total;
}

Outcome pll_oracle() {
  std::mt19937_64 rng(2024);
  const std::vector<std::string> words{"a", "b", "c", "d", "e", "f", "g"};
  std::size_t checked = 0;
  for (int corpus_i = 0; corpus_i < 50; ++corpus_i) {
    std::vector<SentencePair> pairs;
    for (int p = 0; p < 6; ++p) {
      const std::size_t n = 2 + rng() % 7;
      std::vector<std::string> more;
      for (std::size_t i = 0; i < n; ++i) more.push_back(words[rng() % words.size()]);
      auto less = more;
      less[rng() % n] = "x" + std::to_string(rng() % 3);
      auto join = [](const std::vector<std::string>& t) {
        std::string s;
        for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
        return s;
      };
      pairs.push_back({std::to_string(p), join(more), join(less), BiasType::gender, "eng"});
    }
    ParallelCorpus c;
    c.add_slice("eng", pairs);
    const auto kind = corpus_i % 2 == 0 ? ModelKind::masked : ModelKind::causal;
    auto b = TableBackend::random(vocabulary_for(c), kind, static_cast<std::uint64_t>(corpus_i));
    for (const auto& p : pairs) {
      const auto al = align_pair(p, b->tokenizer());
      const double got_more = score_sentence(p, SentenceSide::more, al, *b);
      const double got_less = score_sentence(p, SentenceSide::less, al, *b);
      const double want_more = brute_force_ps(*b, al.tokens_more, al.unchanged_more);
      const double want_less = brute_force_ps(*b, al.tokens_less, al.unchanged_less);
      if (got_more != want_more || got_less != want_less) {
        return {false, fmt::format("corpus {} pair {}: {} vs {}", corpus_i, p.pair_id, got_more, want_more)};
      }
      checked += 2;
    }
  }
  return {true, fmt::format("{} sentences matched exactly", checked)};
}

// --- 2 ---------------------------------------------------------------------

std::vector<PairScore> random_scores(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-80.0, -5.0);
  std::vector<PairScore> out;
  for (const auto* lang : {"eng", "zho", "tha"}) {
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({std::to_string(i), lang, kAllBiasTypes[i % 4], u(rng), u(rng), 3});
    }
  }
  return out;
}

Outcome nbs_laws() {
  std::mt19937_64 rng(99);
  const std::vector<std::string> langs{"eng", "zho", "tha"};
  auto scores = random_scores(rng, 40);
  const auto base = make_bias_report("m", scores, langs);

  for (const auto& [k, e] : base.entries) {
    if (e.nbs != e.nbs_raw * 100.0) return {false, "display scale is not x100"};
  }

  auto equal = scores;
  for (auto& s : equal) s.ps_less = s.ps_more;
  for (const auto& [k, e] : make_bias_report("m", equal, langs).entries) {
    if (e.nbs != 0.0) return {false, "zero law violated"};
  }
  auto nudged = equal;
  nudged[0].ps_less += 1e-6;
  if (!(make_bias_report("m", nudged, langs).entries.at({"eng", nudged[0].bias_type}).nbs > 0.0)) {
    return {false, "non-zero gap reported as zero"};
  }

  double worst = 0.0;
  for (const double alpha : {0.5, 2.0, 10.0}) {
    auto scaled = scores;
    for (auto& s : scaled) {
      s.ps_more *= alpha;
      s.ps_less *= alpha;
    }
    const auto r = make_bias_report("m", scaled, langs);
    for (const auto& [k, e] : base.entries) {
      worst = std::max(worst, std::fabs(r.entries.at(k).nbs - e.nbs) / e.nbs);
    }
  }
  if (!(worst < kScaleRelTol)) return {false, fmt::format("scale relative diff {:.3e}", worst)};

  const auto reference = render_report(base, ReportFormat::json);
  for (int i = 0; i < 100; ++i) {
    std::shuffle(scores.begin(), scores.end(), rng);
    if (render_report(make_bias_report("m", scores, langs), ReportFormat::json) != reference) {
      return {false, fmt::format("shuffle {} changed the report", i)};
    }
  }
  return {true, fmt::format("zero law, x100, scale diff {:.1e}, 100 shuffles identical", worst)};
}

// --- 3 ---------------------------------------------------------------------

Outcome hand_check() {
  const std::vector<PairScore> s{{"1", "eng", BiasType::gender, -9.0, -11.0, 1}};
  const auto w = compute_w_avg(s, {"eng"});
  const auto r = make_bias_report("m", s, {"eng"});
  const double nbs = r.entries.at({"eng", BiasType::gender}).nbs;
  return {w.w_avg == 10.0 && nbs == 20.0, fmt::format("w_avg = {}, NBS = {}", w.w_avg, nbs)};
}

// --- 4 ---------------------------------------------------------------------

/// Rows per bias type of the public release.
const std::vector<std::pair<std::string, std::size_t>> kReleaseProfile{
    {"race-color", 516}, {"socioeconomic", 172},      {"gender", 262},
    {"nationality", 159}, {"religion", 105},          {"age", 87},
    {"sexual-orientation", 84}, {"physical-appearance", 63}, {"disability", 60}};

std::string profile_fixture() {
  std::string csv = ",sent_more,sent_less,stereo_antistereo,bias_type,annotations,anon_writer,anon_annotators\n";
  std::size_t row = 0;
  for (const auto& [type, n] : kReleaseProfile) {
    for (std::size_t i = 0; i < n; ++i, ++row) {
      csv += fmt::format("{},Person {} did it.,Someone {} did it.,stereo,{},[],a,[]\n", row, row, row, type);
    }
  }
  return csv;
}

Outcome corpus_filter() {
  fs::path path;
  if (const char* env = std::getenv("BIASLENS_CROWSPAIRS_CSV"); env && *env) path = env;
  if (path.empty() && fs::exists(source_dir() / "data" / "crows_pairs_anonymized.csv")) {
    path = source_dir() / "data" / "crows_pairs_anonymized.csv";
  }
  if (!path.empty()) {
    const auto r = load_pairs(path, PairFormat::crowspairs_csv);
    return {r.retained == kRetainedPairs,
            fmt::format("{} of {} rows retained from {}", r.retained, r.rows_read, path.string())};
  }
  const auto synthetic = load_pairs_from_string(profile_fixture(), PairFormat::crowspairs_csv);
  Outcome o;
  o.pass = false;
  o.unavailable = true;
  o.detail = fmt::format(
      "public CSV not found (set BIASLENS_CROWSPAIRS_CSV); synthetic profile fixture retained {} of {}",
      synthetic.retained, synthetic.rows_read);
  return o;
}

// --- 5 ---------------------------------------------------------------------

Outcome geometry() {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const int dim = 32;
  const int k = 3;
  Eigen::MatrixXd raw(dim, k);
  for (int i = 0; i < raw.size(); ++i) raw.data()[i] = n(rng);
  BiasSubspace s;
  s.directions = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() * Eigen::MatrixXd::Identity(dim, k);
  s.explained_variance.assign(k, 1.0 / k);

  double worst_ortho = 0.0;
  double worst_idem = 0.0;
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd h(dim);
    for (int i = 0; i < dim; ++i) h(i) = 10.0 * n(rng);
    const auto once = remove_projection(h, s);
    for (int j = 0; j < k; ++j) worst_ortho = std::max(worst_ortho, std::fabs(once.dot(s.directions.col(j))));
    worst_idem = std::max(worst_idem, (remove_projection(once, s) - once).norm());
    if (once.norm() > h.norm() + 1e-12) return {false, "projection increased a norm"};
  }
  if (!(worst_ortho < kOrthoTol)) return {false, fmt::format("max |<h', v>| = {:.3e}", worst_ortho)};
  if (!(worst_idem < kOrthoTol)) return {false, fmt::format("idempotence gap {:.3e}", worst_idem)};

  // Planted axis: signal std kPcaSnr along the axis, unit isotropic noise.
  Eigen::VectorXd axis(dim);
  for (int i = 0; i < dim; ++i) axis(i) = n(rng);
  axis.normalize();
  Eigen::MatrixXd rows(1000, dim);
  for (int r = 0; r < rows.rows(); ++r) {
    Eigen::VectorXd noise(dim);
    for (int i = 0; i < dim; ++i) noise(i) = n(rng);
    rows.row(r) = (kPcaSnr * n(rng) * axis + noise).transpose();
  }
  rows.rowwise() -= rows.colwise().mean();
  const double cos = std::fabs(pca_directions(rows, 1).components.col(0).dot(axis));
  return {cos >= kPcaMinCos,
          fmt::format("max |<h', v>| = {:.1e}, idempotence {:.1e}, PCA cos = {:.5f}", worst_ortho, worst_idem, cos)};
}

// --- 6 ---------------------------------------------------------------------

ParallelCorpus gender_pairs_corpus() {
  const std::vector<std::pair<std::string, std::string>> subjects{
      {"He", "She"}, {"The man", "The woman"}, {"My father", "My mother"}, {"The king", "The queen"},
      {"My brother", "My sister"}, {"The boy", "The girl"}};
  const std::vector<std::string> predicates{"is a nurse.", "fixed the car.", "cried at the film.",
                                            "leads the team.", "cooks dinner every night.",
                                            "is good at math.", "wore a dress.", "plays football."};
  std::vector<SentencePair> pairs;
  for (const auto& [m, f] : subjects) {
    for (const auto& p : predicates) {
      pairs.push_back({std::to_string(pairs.size()), m + " " + p, f + " " + p, BiasType::gender, "eng"});
    }
  }
  ParallelCorpus c;
  c.add_slice("eng", pairs);
  return c;
}

Outcome end_to_end_debias() {
  const auto corpus = gender_pairs_corpus();
  std::vector<std::string> templates;
  {
    std::ifstream in(source_dir() / "tests" / "data" / "templates.txt");
    for (std::string line; std::getline(in, line);) templates.push_back(line);
  }
  std::vector<std::string> extra;
  for (const auto& t : templates) {
    for (const auto& w : WordTokenizer::segment(t)) extra.push_back(w);
  }

  cli::BackendSpec spec;
  spec.type = "linear-bias";
  spec.bias_lexicon = (source_dir() / "data" / "lexicons" / "english.json").string();
  spec.bias_type = "gender";
  const auto backend = cli::make_backend(spec, corpus, extra);

  const auto lexicons = load_lexicons(spec.bias_lexicon);
  const auto gender = std::find_if(lexicons.begin(), lexicons.end(),
                                   [](const AttributeLexicon& l) { return l.bias_type() == BiasType::gender; });
  const auto subspace = fit_subspace(contextualize(*gender, templates, "templates"), *backend);
  const auto debiased = debias_hook(backend, subspace);

  const auto before = make_bias_report(backend->model_id(), score_corpus(corpus, *backend).scores, {"eng"});
  const auto after = make_bias_report(debiased->model_id(), score_corpus(corpus, *debiased).scores, {"eng"});
  const double b = before.entries.at({"eng", BiasType::gender}).nbs;
  const double a = after.entries.at({"eng", BiasType::gender}).nbs;
  const auto red = compute_reduction(before, after, "SenDeb");
  double gender_reduction = 0.0;
  for (const auto& e : red.entries) {
    if (e.bias_type == BiasType::gender) gender_reduction = e.percent.value_or(0.0);
  }
  // The mock moves hidden states only along one direction, so a faithful
  // projection leaves no gap at all.
  const double ratio = b > 0.0 ? a / b : 1.0;
  return {b > 0.0 && ratio < kDebiasRatio && gender_reduction >= kMinReduction,
          fmt::format("NBS {:.4f} -> {:.3e} (ratio {:.1e}), reduction {:.4f}%", b, a, ratio, gender_reduction)};
}

// --- 7 ---------------------------------------------------------------------

std::size_t count_word(const std::string& text, const std::string& word) {
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  const auto t = lower(text);
  const auto w = lower(word);
  std::size_t n = 0;
  for (auto pos = t.find(w); pos != std::string::npos; pos = t.find(w, pos + 1)) {
    const bool left = pos == 0 || !(std::isalnum(static_cast<unsigned char>(t[pos - 1])) || t[pos - 1] == '-');
    const auto end = pos + w.size();
    const bool right = end == t.size() || !(std::isalnum(static_cast<unsigned char>(t[end])) || t[end] == '-');
    n += left && right;
  }
  return n;
}

Outcome cda_balance() {
  const auto all = load_lexicons(source_dir() / "data" / "lexicons" / "english.json");
  std::vector<AttributeLexicon> binary;
  for (const auto& l : all) {
    if (l.arity() == 2) binary.push_back(l);
  }
  if (binary.empty()) return {false, "no binary lexicon shipped"};
  const auto& lex = binary.front();

  std::vector<std::string> words;
  for (const auto& t : lex.tuples()) {
    for (const auto& w : t) {
      if (w.find(' ') == std::string::npos && w.find('-') == std::string::npos) words.push_back(w);
    }
  }
  const std::vector<std::string> fillers{"the", "went", "to", "market", "today", "and", "saw", "a", "dog",
                                         "quietly", "with", "friend", "later"};
  std::mt19937_64 rng(7);
  std::vector<std::string> corpus;
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    const std::size_t len = 4 + rng() % 8;
    for (std::size_t j = 0; j < len; ++j) {
      const bool term = rng() % 4 == 0;
      const auto& w = term ? words[rng() % words.size()] : fillers[rng() % fillers.size()];
      s += (j == 0 ? "" : " ") + w;
    }
    if (rng() % 3 == 0) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    corpus.push_back(s + ".");
  }

  const std::vector<AttributeLexicon> lexicons{lex};
  const auto out = augment_texts(corpus, lexicons, "synthetic");
  for (const auto& t : lex.tuples()) {
    std::size_t a = 0;
    std::size_t b = 0;
    for (const auto& r : out.records) {
      a += count_word(r.text, t[0]);
      b += count_word(r.text, t[1]);
    }
    if (a != b) return {false, fmt::format("{}: {} vs {}: {}", t[0], a, t[1], b)};
  }
  std::map<std::size_t, std::string> originals;
  std::size_t variants = 0;
  for (const auto& r : out.records) {
    if (r.provenance.kind == Provenance::Kind::original) {
      originals[r.seq] = r.text;
      continue;
    }
    ++variants;
    const auto back = swap_terms(r.text, lex);
    if (back.size() != 1 || back.front() != originals.at(r.provenance.source_seq)) {
      return {false, "involution failed on: " + r.text};
    }
  }
  return {true, fmt::format("{} tuples balanced over {} records; {} counterfactuals swap back",
                            lex.tuples().size(), out.records.size(), variants)};
}

// --- 8 ---------------------------------------------------------------------

Outcome reduction_arithmetic() {
  const double r = *reduction_percent(50.0, 40.0);
  const double baseline = 37.06;
  const double reference = -22.42;  // improvements print as negative numbers
  const double treated = baseline * (1.0 + reference / 100.0);
  const double back = -*reduction_percent(baseline, treated);
  return {r == 20.0 && std::fabs(treated - 28.75) <= kInverseTol && std::fabs(back - reference) < 1e-9,
          fmt::format("(50, 40) -> {}%, 37.06 at {}% -> {:.4f}", r, reference, treated)};
}

// --- 9 ---------------------------------------------------------------------

Outcome reproducibility() {
  TempDir dir("repro");
  cli::EvaluateConfig cfg;
  cfg.corpora = {(source_dir() / "tests" / "data" / "pairs_small.csv").string()};
  cfg.backend.type = "linear-bias";
  cfg.backend.bias_lexicon = (source_dir() / "data" / "lexicons" / "english.json").string();
  cfg.output_dir = (dir / "a").string();
  if (cli::cmd_evaluate(cfg) == cli::kExitError) return {false, "first run failed"};
  cfg.output_dir = (dir / "b").string();
  if (cli::cmd_evaluate(cfg) == cli::kExitError) return {false, "second run failed"};
  for (const auto* name : {"report.json", "report.csv", "report.md", "scores.jsonl"}) {
    if (slurp(dir / "a" / name) != slurp(dir / "b" / name)) return {false, std::string(name) + " differs"};
  }
  return {true, "report.{json,csv,md} and scores.jsonl byte-identical"};
}

// --- 10 --------------------------------------------------------------------

Outcome dropout_defaults() {
  TempDir dir("dropout");
  std::ofstream(dir / "train.txt") << "He left.\n";
  const auto job = build_job(FinetuneMethod::dropout, "base", {"train", dir / "train.txt", false});
  const double h = *job.hyperparameters.hidden_dropout;
  const double a = *job.hyperparameters.attention_dropout;
  return {h == 0.20 && a == 0.15, fmt::format("hidden {:.2f}, attention {:.2f}", h, a)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {1, "PLL oracle equivalence", 10.0, pll_oracle},
      {2, "NBS law suite", 5.0, nbs_laws},
      {3, "single-pair hand check", 0.0, hand_check},
      {4, "corpus filter retains 1042 pairs", 2.0, corpus_filter},
      {5, "debias geometry and PCA recovery", 10.0, geometry},
      {6, "end-to-end debias on analytic mock", 30.0, end_to_end_debias},
      {7, "CDA balance and involution", 5.0, cda_balance},
      {8, "reduction arithmetic", 0.0, reduction_arithmetic},
      {9, "reproducible reports", 0.0, reproducibility},
      {10, "dropout defaults", 0.0, dropout_defaults},
  };

  bool merit_failure = false;
  bool unavailable = false;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_seconds > 0.0 && secs >= c.limit_seconds) {
      o.pass = false;
      o.unavailable = false;
      o.detail += fmt::format(" (over the {:.0f} s limit)", c.limit_seconds);
    }
    const auto timing = c.limit_seconds > 0.0 ? fmt::format("{:.3f} s < {:.0f} s", secs, c.limit_seconds)
                                              : fmt::format("{:.3f} s", secs);
    fmt::print("{} {:>2} {}: {} [{}]\n", o.pass ? "PASS" : "FAIL", c.number, c.name, o.detail, timing);
    if (!o.pass) (o.unavailable ? unavailable : merit_failure) = true;
  }
  if (merit_failure) return 1;
  if (unavailable) return kExitUnavailable;
  return 0;
}
