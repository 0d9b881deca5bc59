#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/backend.hpp"
#include "biaslens/corpus.hpp"
#include "json.hpp"

namespace biaslens::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitWarnings = 2;

/// How to obtain a model: a built-in mock or a remote endpoint.
struct BackendSpec {
  /// uniform | table | linear-bias | remote
  std::string type = "uniform";
  std::string kind = "masked";
  std::string model_id;
  std::string endpoint;
  std::size_t hidden_dim = 16;
  std::uint64_t seed = 7;
  /// Lexicon whose terms carry the injected bias of the linear-bias mock.
  std::string bias_lexicon;
  std::string bias_type = "gender";
  double bias_strength = 1.0;
  double bias_gain = 1.0;

  nlohmann::json to_json() const;
};

/// Builds the backend. Mock vocabularies cover `corpus` plus `extra_words`.
BackendPtr make_backend(const BackendSpec& spec, const ParallelCorpus& corpus,
                        const std::vector<std::string>& extra_words = {});

struct EvaluateConfig {
  std::vector<std::string> corpora;
  std::string format = "crowspairs-csv";
  std::string default_language = "eng";
  std::vector<std::string> languages;
  BackendSpec backend;
  std::string subspace;
  std::string output_dir;
  bool raw_causal = false;
  bool plot = false;
};

struct AugmentConfig {
  std::string input;
  std::string input_format = "text";
  std::string wikipedia;
  std::string wikipedia_format = "jsonl";
  double fraction = 1.0;
  std::uint64_t seed = 42;
  bool exact = false;
  std::string lexicon;
  std::vector<std::string> bias_types;
  std::string output;
};

struct SubspaceConfig {
  std::string templates;
  std::string template_format = "text";
  std::string lexicon;
  std::string bias_type = "gender";
  BackendSpec backend;
  std::size_t k = 1;
  std::string centering = "per-example";
  std::string output;
};

struct CompareConfig {
  std::string baseline;
  /// "method=path" or a bare path (method "treated").
  std::vector<std::string> treated;
  bool paper_sign = false;
  std::string format = "markdown";
  std::string output_dir;
};

struct FinetuneConfig {
  std::string method = "dropout";
  std::string train_corpus;
  std::string corpus_id;
  std::string trainer = "identity";
  double shrink_factor = 0.5;
  std::optional<double> hidden_dropout;
  std::optional<double> attention_dropout;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps;
  BackendSpec backend;
  std::vector<std::string> eval_corpora;
  std::string eval_format = "crowspairs-csv";
  std::string default_language = "eng";
  std::vector<std::string> languages;
  std::string output_dir;
};

/// Each command returns kExitOk, kExitWarnings (more than 10% of a language
/// skipped) or kExitError, printing the reason to stderr.
int cmd_evaluate(const EvaluateConfig& config);
int cmd_augment(const AugmentConfig& config);
int cmd_subspace(const SubspaceConfig& config);
int cmd_compare(const CompareConfig& config);
int cmd_finetune(const FinetuneConfig& config);

/// Full command line including the program name.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace biaslens::cli
