#include "biaslens/tokenizer.hpp"

#include "biaslens/errors.hpp"
#include "biaslens/text.hpp"

namespace biaslens {

Vocabulary::Vocabulary() {
  add("<unk>");
  add("<bos>");
  add("<mask>");
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) : Vocabulary() {
  for (const auto& w : words) add(w);
}

TokenId Vocabulary::add(const std::string& word) {
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(words_.size());
  words_.push_back(word);
  index_.emplace(word, id);
  return id;
}

TokenId Vocabulary::id_of(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw UsageError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return words_[static_cast<std::size_t>(id)];
}

namespace {

bool splits_trailing(char32_t c, bool final_chunk) {
  if (c == U'.') return final_chunk;
  return text::is_punctuation(c) && c != U'\'' && c != 0x2019;
}

}  // namespace

std::vector<std::string> WordTokenizer::segment(std::string_view input) {
  const auto cps = text::decode_utf8(input);

  // Whitespace-delimited chunks as code point ranges.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t i = 0; i < cps.size();) {
    if (text::is_space(cps[i].value)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && !text::is_space(cps[j].value)) ++j;
    chunks.emplace_back(i, j);
    i = j;
  }

  std::vector<std::string> out;
  auto bytes = [&](std::size_t a, std::size_t b) {
    return std::string(input.substr(cps[a].begin, cps[b - 1].end - cps[a].begin));
  };

  for (std::size_t c = 0; c < chunks.size(); ++c) {
    auto [lo, hi] = chunks[c];
    const bool final_chunk = c + 1 == chunks.size();

    std::vector<std::string> leading;
    while (lo < hi && text::is_punctuation(cps[lo].value) && hi - lo > 1) {
      leading.push_back(bytes(lo, lo + 1));
      ++lo;
    }
    std::vector<std::string> trailing;
    while (hi - lo > 1 && splits_trailing(cps[hi - 1].value, final_chunk)) {
      trailing.push_back(bytes(hi - 1, hi));
      --hi;
    }

    out.insert(out.end(), leading.begin(), leading.end());
    std::size_t run = lo;
    for (std::size_t k = lo; k < hi; ++k) {
      if (text::is_unspaced_script(cps[k].value)) {
        if (run < k) out.push_back(bytes(run, k));
        out.push_back(bytes(k, k + 1));
        run = k + 1;
      }
    }
    if (run < hi) out.push_back(bytes(run, hi));
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

Encoding WordTokenizer::encode(std::string_view text) const {
  Encoding enc;
  enc.pieces = segment(text);
  enc.ids.reserve(enc.pieces.size());
  for (const auto& p : enc.pieces) enc.ids.push_back(vocab_.id_of(p));
  return enc;
}

}  // namespace biaslens
