#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biaslens/tokenizer.hpp"

namespace biaslens {

enum class BiasType { gender, race_color, nationality, religion };

inline constexpr BiasType kAllBiasTypes[] = {BiasType::gender, BiasType::nationality,
                                             BiasType::race_color, BiasType::religion};

/// Canonical label: "gender", "race-color", "nationality", "religion".
std::string to_string(BiasType t);
/// Parses a canonical label. Throws UsageError for anything else.
BiasType parse_bias_type(std::string_view label);
/// Display label used in rendered tables ("Race-color").
std::string display_name(BiasType t);

/// One stereotypical / anti-stereotypical minimal pair.
struct SentencePair {
  std::string pair_id;
  std::string sent_more;
  std::string sent_less;
  BiasType bias_type = BiasType::gender;
  std::string language = "eng";

  /// Throws CorpusError when sent_more == sent_less or a field is empty.
  void validate() const;
  /// The same pair with the two sentences exchanged.
  SentencePair swapped() const;

  bool operator==(const SentencePair&) const = default;
};

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const TokenSpan&) const = default;
};

/// Token-level decomposition of a pair into the shared subsequence U and the
/// spans unique to each sentence.
struct PairAlignment {
  std::vector<std::string> tokens_more;
  std::vector<std::string> tokens_less;
  /// Positions of U in each tokenization, increasing, same length.
  std::vector<std::size_t> unchanged_more;
  std::vector<std::size_t> unchanged_less;
  std::vector<TokenSpan> modified_more;
  std::vector<TokenSpan> modified_less;
  std::string tokenizer_id;

  std::size_t n_unchanged() const { return unchanged_more.size(); }
  std::vector<std::string> unchanged_tokens() const;
  /// Flattened modified tokens of one side.
  std::vector<std::string> modified_tokens(bool more) const;
  const std::vector<std::size_t>& unchanged(bool more) const {
    return more ? unchanged_more : unchanged_less;
  }
};

using TokenizeFn = std::function<std::vector<std::string>(std::string_view)>;

/// Aligns a pair by token-level longest common subsequence. Ties between
/// equally long subsequences are broken by earliest combined position, then
/// by token text, so the choice does not depend on which side is "more".
/// Throws AlignmentError when a side has no tokens or nothing is shared.
PairAlignment align_pair(const SentencePair& pair, const TokenizeFn& tokenize,
                         std::string tokenizer_id);
PairAlignment align_pair(const SentencePair& pair, const Tokenizer& tokenizer);

/// A pair kept out of a language slice (failed translation, collapsed pair).
struct Exclusion {
  std::string pair_id;
  std::string reason;
};

/// Minimal-pair corpus keyed by language. Pair ids are shared across
/// translations of the same pair.
class ParallelCorpus {
 public:
  /// Adds a language slice. Throws CorpusError on duplicate ids, mismatched
  /// language labels or an already present language.
  void add_slice(const std::string& language, std::vector<SentencePair> pairs,
                 std::vector<Exclusion> excluded = {});

  const std::vector<std::string>& languages() const { return languages_; }
  bool has_language(const std::string& language) const;
  const std::vector<SentencePair>& slice(const std::string& language) const;
  const std::vector<Exclusion>& excluded(const std::string& language) const;
  std::map<std::string, std::size_t> n_per_language() const;
  std::size_t total_pairs() const;
  bool empty() const { return total_pairs() == 0; }

  /// Throws CorpusError unless every language covers the same pair ids
  /// (counting excluded ids as covered).
  void validate_parallel() const;

  /// Restricts every slice to ids present (not excluded) in all languages.
  /// Returns the number of ids dropped.
  std::size_t restrict_to_common_ids();

  /// Languages restricted to `keep`, in the order given. Unknown languages throw.
  ParallelCorpus select(const std::vector<std::string>& keep) const;

  bool operator==(const ParallelCorpus& other) const;

 private:
  std::vector<std::string> languages_;
  std::map<std::string, std::vector<SentencePair>> slices_;
  std::map<std::string, std::vector<Exclusion>> excluded_;
};

enum class PairFormat { crowspairs_csv, pairs_jsonl };
PairFormat parse_pair_format(std::string_view name);

/// Maps raw dataset labels onto the retained bias types. Unmapped labels are dropped.
class BiasTypeFilter {
 public:
  /// gender, race-color, nationality, religion.
  static BiasTypeFilter defaults();

  void map(std::string raw_label, BiasType type);
  std::optional<BiasType> classify(std::string_view raw_label) const;

 private:
  std::map<std::string, BiasType> mapping_;
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct LoadOptions {
  /// Language of crowspairs-csv rows lacking a language column.
  std::string default_language = "eng";
  BiasTypeFilter filter = BiasTypeFilter::defaults();
};

struct LoadResult {
  ParallelCorpus corpus;
  std::size_t rows_read = 0;
  std::size_t retained = 0;
  /// Raw label -> rows dropped by the bias-type filter.
  std::map<std::string, std::size_t> dropped;
  std::vector<RowError> row_errors;
};

/// Reads pairs. Rows outside the retained bias types are dropped and counted;
/// malformed rows become RowErrors. Throws CorpusError when nothing is retained
/// or the file cannot be read.
LoadResult load_pairs(const std::filesystem::path& path, PairFormat format,
                      const LoadOptions& options = {});
LoadResult load_pairs_from_string(std::string_view content, PairFormat format,
                                  const LoadOptions& options = {});

/// Writes every slice as pairs-jsonl, languages in corpus order.
void save_pairs_jsonl(const ParallelCorpus& corpus, const std::filesystem::path& path);
std::string to_pairs_jsonl(const ParallelCorpus& corpus);

/// RFC 4180 CSV reader: quoted fields, doubled quotes, embedded newlines.
/// Each record carries the 1-based line it started on.
struct CsvRecord {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<CsvRecord> parse_csv(std::string_view content);

// --- translation -----------------------------------------------------------

/// Injected translation client. Throws on provider failure.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string id() const = 0;
  virtual std::string translate(std::string_view text, const std::string& source_lang,
                                const std::string& target_lang) = 0;
};

struct CachedTranslation {
  std::string sent_more;
  std::string sent_less;
};

/// Append-only JSONL cache keyed by (pair_id, target language). Reruns with a
/// warm cache never call the translator. Writes are serialized.
class TranslationCache {
 public:
  explicit TranslationCache(std::filesystem::path path);

  std::optional<CachedTranslation> get(const std::string& pair_id,
                                       const std::string& target_lang) const;
  void put(const std::string& pair_id, const std::string& source_lang,
           const std::string& target_lang, const std::string& translator_id,
           const CachedTranslation& value);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, CachedTranslation> entries_;
};

struct TranslationResult {
  ParallelCorpus corpus;
  std::vector<std::string> untranslated;
  /// Pairs whose two sentences became identical after translation.
  std::vector<std::string> collisions;
  std::size_t cache_hits = 0;
  double untranslated_fraction = 0.0;
  std::optional<std::string> warning;
};

/// Adds a `target_lang` slice translated from `source_lang`. Provider failures
/// mark the pair untranslated; more than 5% untranslated raises a warning.
TranslationResult translate_corpus(const ParallelCorpus& corpus, const std::string& source_lang,
                                   const std::string& target_lang, Translator& translator,
                                   TranslationCache* cache = nullptr);

}  // namespace biaslens
