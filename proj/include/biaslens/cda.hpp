#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biaslens/corpus.hpp"

namespace biaslens {

enum class CasingPolicy {
  /// Case-insensitive match; the replacement copies the match's capitalization.
  preserve,
  /// Byte-exact match and replacement.
  exact,
};

/// A lexicon occurrence in a text. Byte offsets.
struct TermMatch {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t tuple_index = 0;
  std::size_t slot = 0;
};

/// d-tuples of surface forms that differ only in the social attribute, e.g.
/// (he, she) or (black, caucasian, asian).
class AttributeLexicon {
 public:
  /// Throws UsageError when tuples are empty, of mixed arity, of arity < 2,
  /// contain repeated entries, or a word occurs in more than one slot.
  AttributeLexicon(BiasType bias_type, std::vector<std::vector<std::string>> tuples,
                   CasingPolicy casing = CasingPolicy::preserve);

  BiasType bias_type() const { return bias_type_; }
  std::size_t arity() const { return arity_; }
  const std::vector<std::vector<std::string>>& tuples() const { return tuples_; }
  CasingPolicy casing() const { return casing_; }
  /// Stable identifier derived from the content.
  std::string id() const;

  /// Whole-word, non-overlapping, left to right; longest entry wins.
  std::vector<TermMatch> find(std::string_view text) const;

 private:
  struct Entry {
    std::string key;
    std::size_t tuple_index;
    std::size_t slot;
  };

  BiasType bias_type_;
  std::vector<std::vector<std::string>> tuples_;
  CasingPolicy casing_;
  std::size_t arity_ = 0;
  /// First word of each entry -> entries, longest first.
  std::unordered_map<std::string, std::vector<Entry>> by_head_;
};

/// Reads {"<bias type>": [[w1, w2], ...], ...}. A value may also be an object
/// {"tuples": [...], "casing": "preserve" | "exact"}. Throws ParseError with
/// line/column for malformed JSON and UsageError for invalid lexicons.
std::vector<AttributeLexicon> parse_lexicons(std::string_view json_text);
std::vector<AttributeLexicon> load_lexicons(const std::filesystem::path& path);

struct Replacement {
  std::size_t tuple_index = 0;
  std::size_t from_slot = 0;
  std::size_t to_slot = 0;
  bool operator==(const Replacement&) const = default;
};

struct Counterfactual {
  std::string text;
  /// Every matched slot s was replaced by slot (s + offset) mod d.
  std::size_t offset = 0;
  std::vector<Replacement> replacements;
};

/// d - 1 variants when the text contains at least one lexicon term, none otherwise.
std::vector<Counterfactual> counterfactuals(std::string_view text, const AttributeLexicon& lexicon);
/// Texts of counterfactuals().
std::vector<std::string> swap_terms(std::string_view text, const AttributeLexicon& lexicon);

// --- streaming corpora ------------------------------------------------------

struct TextRecord {
  std::string doc_id;
  std::string text;
};

enum class StreamFormat { text, jsonl };
StreamFormat parse_stream_format(std::string_view name);

/// Line-oriented record reader. `text`: one record per line, id = line number.
/// `jsonl`: {"id" | "doc_id", "text"} per line.
class LineSource {
 public:
  LineSource(std::istream& in, StreamFormat format, std::string name = "<input>");
  /// nullopt at end of input. Throws CorpusError on read failure and ParseError
  /// on malformed JSON, both naming the line.
  std::optional<TextRecord> next();
  std::string position() const;
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  StreamFormat format_;
  std::string name_;
  std::size_t line_ = 0;
};

struct Provenance {
  enum class Kind { original, counterfactual };
  Kind kind = Kind::original;
  /// Sequence number of the originating original record.
  std::size_t source_seq = 0;
  std::optional<BiasType> bias_type;
  std::size_t offset = 0;
  std::vector<Replacement> replacements;
};

struct AugmentedRecord {
  std::size_t seq = 0;
  std::string doc_id;
  std::string text;
  Provenance provenance;
};

std::string to_jsonl(const AugmentedRecord& record);
AugmentedRecord augmented_record_from_json(std::string_view line);

struct AugmentedCorpus {
  std::string source_id;
  std::vector<AugmentedRecord> records;
};

struct AugmentStats {
  std::size_t originals = 0;
  std::size_t counterfactuals = 0;
  /// Originals with at least one lexicon term.
  std::size_t matched = 0;
};

using RecordSink = std::function<void(const AugmentedRecord&)>;

/// Passes every original through and follows it with its counterfactuals for
/// each lexicon that matches it, in lexicon order.
AugmentStats augment_corpus(LineSource& source, std::span<const AttributeLexicon> lexicons,
                            const RecordSink& sink);
AugmentedCorpus augment_texts(const std::vector<std::string>& texts,
                              std::span<const AttributeLexicon> lexicons,
                              std::string source_id = "memory");

// --- Wikipedia sampling -----------------------------------------------------

struct Article {
  std::string id;
  std::string title;
  std::string text;
};

/// Article reader over JSONL ({"id", "title"?, "text"}) or plain text (one
/// article per line, id = 1-based line number).
class ArticleSource {
 public:
  ArticleSource(std::istream& in, StreamFormat format, std::string name = "<dump>");
  std::optional<Article> next();

 private:
  std::istream& in_;
  StreamFormat format_;
  std::string name_;
  std::size_t line_ = 0;
};

struct SampleStats {
  std::size_t seen = 0;
  std::size_t kept = 0;
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Hash key of an article under `seed`; the sample keeps the smallest keys.
double sample_key(std::string_view article_id, std::uint64_t seed);

/// Streaming Bernoulli-by-hash sample: keeps an article iff its key is below
/// `fraction`. Deterministic per seed, order preserving. Throws UsageError for
/// fraction outside (0, 1] and CorpusError for an empty dump.
SampleStats sample_wikipedia(ArticleSource& dump, double fraction, std::uint64_t seed,
                             const std::function<void(const Article&)>& sink);

/// Exact-size variant: keeps the round(fraction * N) articles with the smallest
/// keys. Reads the dump twice through `open`.
SampleStats sample_wikipedia_exact(const std::function<std::unique_ptr<std::istream>()>& open,
                                   StreamFormat format, double fraction, std::uint64_t seed,
                                   const std::function<void(const Article&)>& sink);

/// Splits running text into sentences at . ! ? (and CJK/Thai terminators)
/// followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

}  // namespace biaslens
