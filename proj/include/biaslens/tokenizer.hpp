#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace biaslens {

using TokenId = std::int32_t;

/// Token strings and their ids. Both vectors have the same length.
struct Encoding {
  std::vector<std::string> pieces;
  std::vector<TokenId> ids;
};

/// A model's own tokenizer. Alignment and scoring both go through it, so
/// unchanged/modified tokens are always defined in the model's vocabulary.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  virtual Encoding encode(std::string_view text) const = 0;
  /// Beginning-of-sequence id, prepended for causal scoring so the first
  /// token has a non-empty prefix.
  virtual std::optional<TokenId> bos() const { return std::nullopt; }

  std::vector<std::string> pieces(std::string_view text) const { return encode(text).pieces; }
};

class Vocabulary {
 public:
  static constexpr TokenId kUnk = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kMask = 2;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& words);

  /// Adds `word` if absent. Returns its id either way.
  TokenId add(const std::string& word);
  TokenId id_of(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Whitespace tokenizer with punctuation splitting. Characters from scripts
/// written without spaces (Han, Thai, ...) become one token each. A trailing
/// period is split only from the final word so abbreviations like "Mr." survive.
class WordTokenizer : public Tokenizer {
 public:
  explicit WordTokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {}

  std::string id() const override { return "word-v1"; }
  Encoding encode(std::string_view text) const override;
  std::optional<TokenId> bos() const override { return Vocabulary::kBos; }

  const Vocabulary& vocabulary() const { return vocab_; }

  /// Segmentation only, no vocabulary lookup.
  static std::vector<std::string> segment(std::string_view text);

 private:
  Vocabulary vocab_;
};

}  // namespace biaslens
