#include "biaslens/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "biaslens/errors.hpp"
#include "biaslens/text.hpp"
#include "json.hpp"

namespace biaslens {

using nlohmann::json;

std::string to_string(BiasType t) {
  switch (t) {
    case BiasType::gender:
      return "gender";
    case BiasType::race_color:
      return "race-color";
    case BiasType::nationality:
      return "nationality";
    case BiasType::religion:
      return "religion";
  }
  return "unknown";
}

std::string display_name(BiasType t) {
  switch (t) {
    case BiasType::gender:
      return "Gender";
    case BiasType::race_color:
      return "Race-color";
    case BiasType::nationality:
      return "Nationality";
    case BiasType::religion:
      return "Religion";
  }
  return "Unknown";
}

BiasType parse_bias_type(std::string_view label) {
  for (const auto t : kAllBiasTypes) {
    if (to_string(t) == label) return t;
  }
  throw UsageError("unknown bias type '" + std::string(label) + "'");
}

void SentencePair::validate() const {
  if (pair_id.empty()) throw CorpusError("pair without pair_id");
  if (sent_more.empty() || sent_less.empty()) {
    throw CorpusError("pair " + pair_id + " has an empty sentence");
  }
  if (sent_more == sent_less) {
    throw CorpusError("pair " + pair_id + " has identical sentences");
  }
  if (language.empty()) throw CorpusError("pair " + pair_id + " has no language");
}

SentencePair SentencePair::swapped() const {
  SentencePair p = *this;
  std::swap(p.sent_more, p.sent_less);
  return p;
}

// --- alignment -------------------------------------------------------------

std::vector<std::string> PairAlignment::unchanged_tokens() const {
  std::vector<std::string> out;
  out.reserve(unchanged_more.size());
  for (const auto i : unchanged_more) out.push_back(tokens_more[i]);
  return out;
}

std::vector<std::string> PairAlignment::modified_tokens(bool more) const {
  const auto& spans = more ? modified_more : modified_less;
  const auto& tokens = more ? tokens_more : tokens_less;
  std::vector<std::string> out;
  for (const auto& s : spans) {
    for (auto i = s.begin; i < s.end; ++i) out.push_back(tokens[i]);
  }
  return out;
}

namespace {

std::vector<TokenSpan> complement_spans(const std::vector<std::size_t>& kept, std::size_t n) {
  std::vector<TokenSpan> spans;
  std::size_t cursor = 0;
  auto flush = [&](std::size_t upto) {
    if (cursor < upto) spans.push_back({cursor, upto});
  };
  for (const auto k : kept) {
    flush(k);
    cursor = k + 1;
  }
  flush(n);
  return spans;
}

}  // namespace

PairAlignment align_pair(const SentencePair& pair, const TokenizeFn& tokenize,
                         std::string tokenizer_id) {
  PairAlignment al;
  al.tokenizer_id = std::move(tokenizer_id);
  al.tokens_more = tokenize(pair.sent_more);
  al.tokens_less = tokenize(pair.sent_less);
  const auto& a = al.tokens_more;
  const auto& b = al.tokens_less;
  if (a.empty() || b.empty()) {
    throw AlignmentError("pair " + pair.pair_id + " has a sentence with no tokens");
  }

  // suffix[i][j] = LCS length of a[i:] and b[j:].
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<std::size_t>> suffix(n + 1, std::vector<std::size_t>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t j = m; j-- > 0;) {
      suffix[i][j] = a[i] == b[j] ? suffix[i + 1][j + 1] + 1
                                  : std::max(suffix[i + 1][j], suffix[i][j + 1]);
    }
  }
  if (suffix[0][0] == 0) {
    throw AlignmentError("pair " + pair.pair_id + " shares no tokens");
  }

  // Walk forward choosing, among matches that still complete a maximum
  // subsequence, the one with the smallest i + j, then the smallest token,
  // then the smaller min(i, j). All three keys are symmetric in (a, b).
  std::size_t i0 = 0;
  std::size_t j0 = 0;
  while (suffix[i0][j0] > 0) {
    const std::size_t need = suffix[i0][j0];
    std::optional<std::pair<std::size_t, std::size_t>> best;
    auto better = [&](std::size_t i, std::size_t j) {
      if (!best) return true;
      const auto [bi, bj] = *best;
      if (i + j != bi + bj) return i + j < bi + bj;
      if (a[i] != a[bi]) return a[i] < a[bi];
      return std::min(i, j) < std::min(bi, bj);
    };
    for (std::size_t i = i0; i < n; ++i) {
      for (std::size_t j = j0; j < m; ++j) {
        if (a[i] == b[j] && suffix[i + 1][j + 1] + 1 == need && better(i, j)) best = {i, j};
      }
    }
    al.unchanged_more.push_back(best->first);
    al.unchanged_less.push_back(best->second);
    i0 = best->first + 1;
    j0 = best->second + 1;
  }

  al.modified_more = complement_spans(al.unchanged_more, n);
  al.modified_less = complement_spans(al.unchanged_less, m);
  return al;
}

PairAlignment align_pair(const SentencePair& pair, const Tokenizer& tokenizer) {
  return align_pair(
      pair, [&](std::string_view s) { return tokenizer.pieces(s); }, tokenizer.id());
}

// --- ParallelCorpus --------------------------------------------------------

void ParallelCorpus::add_slice(const std::string& language, std::vector<SentencePair> pairs,
                               std::vector<Exclusion> excluded) {
  if (has_language(language)) throw CorpusError("language " + language + " already present");
  std::set<std::string> ids;
  for (const auto& p : pairs) {
    if (p.language != language) {
      throw CorpusError("pair " + p.pair_id + " labelled " + p.language + " in slice " +
                        language);
    }
    if (!ids.insert(p.pair_id).second) {
      throw CorpusError("duplicate pair_id " + p.pair_id + " in " + language);
    }
  }
  for (const auto& e : excluded) {
    if (!ids.insert(e.pair_id).second) {
      throw CorpusError("pair_id " + e.pair_id + " both kept and excluded in " + language);
    }
  }
  languages_.push_back(language);
  slices_[language] = std::move(pairs);
  excluded_[language] = std::move(excluded);
}

bool ParallelCorpus::has_language(const std::string& language) const {
  return slices_.count(language) > 0;
}

const std::vector<SentencePair>& ParallelCorpus::slice(const std::string& language) const {
  auto it = slices_.find(language);
  if (it == slices_.end()) throw UsageError("no slice for language " + language);
  return it->second;
}

const std::vector<Exclusion>& ParallelCorpus::excluded(const std::string& language) const {
  auto it = excluded_.find(language);
  if (it == excluded_.end()) throw UsageError("no slice for language " + language);
  return it->second;
}

std::map<std::string, std::size_t> ParallelCorpus::n_per_language() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [lang, pairs] : slices_) out[lang] = pairs.size();
  return out;
}

std::size_t ParallelCorpus::total_pairs() const {
  std::size_t n = 0;
  for (const auto& [lang, pairs] : slices_) n += pairs.size();
  return n;
}

namespace {

std::set<std::string> covered_ids(const std::vector<SentencePair>& pairs,
                                  const std::vector<Exclusion>& excluded) {
  std::set<std::string> ids;
  for (const auto& p : pairs) ids.insert(p.pair_id);
  for (const auto& e : excluded) ids.insert(e.pair_id);
  return ids;
}

}  // namespace

void ParallelCorpus::validate_parallel() const {
  if (languages_.empty()) return;
  const auto& first = languages_.front();
  const auto reference = covered_ids(slices_.at(first), excluded_.at(first));
  for (const auto& lang : languages_) {
    if (covered_ids(slices_.at(lang), excluded_.at(lang)) != reference) {
      throw CorpusError("pair ids of " + lang + " differ from " + first);
    }
  }
}

std::size_t ParallelCorpus::restrict_to_common_ids() {
  if (languages_.empty()) return 0;
  std::set<std::string> common;
  std::set<std::string> all;
  bool first = true;
  for (const auto& lang : languages_) {
    std::set<std::string> ids;
    for (const auto& p : slices_[lang]) ids.insert(p.pair_id);
    all.insert(ids.begin(), ids.end());
    if (first) {
      common = std::move(ids);
      first = false;
    } else {
      std::set<std::string> kept;
      std::set_intersection(common.begin(), common.end(), ids.begin(), ids.end(),
                            std::inserter(kept, kept.begin()));
      common = std::move(kept);
    }
  }
  for (const auto& lang : languages_) {
    auto& pairs = slices_[lang];
    std::erase_if(pairs, [&](const SentencePair& p) { return !common.count(p.pair_id); });
    std::set<std::string> known;
    for (const auto& e : excluded_[lang]) known.insert(e.pair_id);
    for (const auto& id : all) {
      if (!common.count(id) && !known.count(id)) {
        excluded_[lang].push_back({id, "missing in another language"});
      }
    }
  }
  return all.size() - common.size();
}

ParallelCorpus ParallelCorpus::select(const std::vector<std::string>& keep) const {
  ParallelCorpus out;
  for (const auto& lang : keep) out.add_slice(lang, slice(lang), excluded(lang));
  return out;
}

bool ParallelCorpus::operator==(const ParallelCorpus& other) const {
  if (languages_ != other.languages_ || slices_ != other.slices_) return false;
  for (const auto& lang : languages_) {
    const auto& a = excluded_.at(lang);
    const auto& b = other.excluded_.at(lang);
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].pair_id != b[i].pair_id || a[i].reason != b[i].reason) return false;
    }
  }
  return true;
}

// --- loading ---------------------------------------------------------------

PairFormat parse_pair_format(std::string_view name) {
  if (name == "crowspairs-csv") return PairFormat::crowspairs_csv;
  if (name == "pairs-jsonl") return PairFormat::pairs_jsonl;
  throw UsageError("unknown pair format '" + std::string(name) + "'");
}

namespace {

std::string normalize_label(std::string_view raw) {
  auto s = text::ascii_lower(text::trim(raw));
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

}  // namespace

BiasTypeFilter BiasTypeFilter::defaults() {
  BiasTypeFilter f;
  for (const auto t : kAllBiasTypes) f.map(to_string(t), t);
  return f;
}

void BiasTypeFilter::map(std::string raw_label, BiasType type) {
  mapping_[normalize_label(raw_label)] = type;
}

std::optional<BiasType> BiasTypeFilter::classify(std::string_view raw_label) const {
  auto it = mapping_.find(normalize_label(raw_label));
  if (it == mapping_.end()) return std::nullopt;
  return it->second;
}

std::vector<CsvRecord> parse_csv(std::string_view content) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && current.fields[0].empty();
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
    current.line = line;
  };

  std::size_t i = 0;
  if (content.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  for (; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\n') {
      ++line;
      end_record();
    } else if (c == '\r') {
      // CRLF: the '\n' ends the record.
    } else {
      field += c;
      field_started = true;
    }
  }
  if (in_quotes) throw ParseError("unterminated quoted field", "line " + std::to_string(line));
  if (field_started || !current.fields.empty()) end_record();
  return records;
}

namespace {

struct RowSink {
  const LoadOptions& options;
  LoadResult& result;
  std::map<std::string, std::vector<SentencePair>> by_language;
  std::vector<std::string> order;

  void accept(std::size_t line, SentencePair pair, std::string_view raw_type) {
    ++result.rows_read;
    const auto type = options.filter.classify(raw_type);
    if (!type) {
      ++result.dropped[normalize_label(raw_type)];
      return;
    }
    pair.bias_type = *type;
    try {
      pair.validate();
    } catch (const CorpusError& e) {
      result.row_errors.push_back({line, e.what()});
      return;
    }
    auto& slice = by_language[pair.language];
    if (slice.empty()) order.push_back(pair.language);
    for (const auto& p : slice) {
      if (p.pair_id == pair.pair_id) {
        result.row_errors.push_back({line, "duplicate pair_id " + pair.pair_id});
        return;
      }
    }
    slice.push_back(std::move(pair));
  }

  void error(std::size_t line, std::string message) {
    ++result.rows_read;
    result.row_errors.push_back({line, std::move(message)});
  }

  void finish() {
    for (const auto& lang : order) {
      result.retained += by_language[lang].size();
      result.corpus.add_slice(lang, std::move(by_language[lang]));
    }
    std::size_t dropped = 0;
    for (const auto& [label, n] : result.dropped) dropped += n;
    if (dropped > 0) {
      spdlog::info("dropped {} rows outside the retained bias types", dropped);
    }
    if (!result.row_errors.empty()) {
      spdlog::warn("{} malformed rows skipped", result.row_errors.size());
    }
    if (result.retained == 0) {
      throw CorpusError("no pairs retained after bias-type filtering (" +
                        std::to_string(result.rows_read) + " rows read)");
    }
  }
};

void load_csv(std::string_view content, RowSink& sink) {
  const auto records = parse_csv(content);
  if (records.empty()) throw CorpusError("empty csv input");
  const auto& header = records.front().fields;
  auto column = [&](std::initializer_list<std::string_view> names) -> std::optional<std::size_t> {
    for (const auto name : names) {
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (text::trim(header[c]) == name) return c;
      }
    }
    return std::nullopt;
  };
  const auto more = column({"sent_more"});
  const auto less = column({"sent_less"});
  const auto type = column({"bias_type"});
  if (!more || !less || !type) {
    throw ParseError("csv header lacks sent_more, sent_less or bias_type", "line 1");
  }
  const auto id = column({"pair_id", "id", ""});
  const auto language = column({"language"});

  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.fields.size() != header.size()) {
      sink.error(rec.line, "expected " + std::to_string(header.size()) + " fields, got " +
                               std::to_string(rec.fields.size()));
      continue;
    }
    SentencePair pair;
    pair.pair_id = id ? text::trim(rec.fields[*id]) : std::to_string(r - 1);
    pair.sent_more = text::trim(rec.fields[*more]);
    pair.sent_less = text::trim(rec.fields[*less]);
    pair.language = language ? text::trim(rec.fields[*language]) : sink.options.default_language;
    sink.accept(rec.line, std::move(pair), rec.fields[*type]);
  }
}

void load_jsonl(std::string_view content, RowSink& sink) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    const auto line = text::trim(content.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) {
      if (end == content.size()) break;
      continue;
    }
    try {
      const auto obj = json::parse(line);
      SentencePair pair;
      pair.pair_id = obj.at("pair_id").is_string() ? obj.at("pair_id").get<std::string>()
                                                   : obj.at("pair_id").dump();
      pair.language = obj.at("language").get<std::string>();
      pair.sent_more = obj.at("sent_more").get<std::string>();
      pair.sent_less = obj.at("sent_less").get<std::string>();
      sink.accept(line_no, std::move(pair), obj.at("bias_type").get<std::string>());
    } catch (const json::exception& e) {
      sink.error(line_no, e.what());
    }
    if (end == content.size()) break;
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

LoadResult load_pairs_from_string(std::string_view content, PairFormat format,
                                  const LoadOptions& options) {
  LoadResult result;
  RowSink sink{options, result, {}, {}};
  if (format == PairFormat::crowspairs_csv) {
    load_csv(content, sink);
  } else {
    load_jsonl(content, sink);
  }
  sink.finish();
  return result;
}

LoadResult load_pairs(const std::filesystem::path& path, PairFormat format,
                      const LoadOptions& options) {
  return load_pairs_from_string(read_file(path), format, options);
}

std::string to_pairs_jsonl(const ParallelCorpus& corpus) {
  std::string out;
  for (const auto& lang : corpus.languages()) {
    for (const auto& p : corpus.slice(lang)) {
      json obj{{"pair_id", p.pair_id},
               {"language", p.language},
               {"sent_more", p.sent_more},
               {"sent_less", p.sent_less},
               {"bias_type", to_string(p.bias_type)}};
      out += obj.dump();
      out += '\n';
    }
  }
  return out;
}

void save_pairs_jsonl(const ParallelCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << to_pairs_jsonl(corpus);
}

// --- translation -----------------------------------------------------------

TranslationCache::TranslationCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto obj = json::parse(line);
      entries_[{obj.at("pair_id").get<std::string>(), obj.at("target_lang").get<std::string>()}] =
          {obj.at("sent_more").get<std::string>(), obj.at("sent_less").get<std::string>()};
    } catch (const json::exception& e) {
      spdlog::warn("{}:{}: ignoring unreadable cache entry", path_.string(), line_no);
    }
  }
}

std::optional<CachedTranslation> TranslationCache::get(const std::string& pair_id,
                                                       const std::string& target_lang) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({pair_id, target_lang});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void TranslationCache::put(const std::string& pair_id, const std::string& source_lang,
                           const std::string& target_lang, const std::string& translator_id,
                           const CachedTranslation& value) {
  std::lock_guard lock(mutex_);
  entries_[{pair_id, target_lang}] = value;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw CorpusError("cannot append to translation cache " + path_.string());
  out << json{{"pair_id", pair_id},
              {"source_lang", source_lang},
              {"target_lang", target_lang},
              {"translator", translator_id},
              {"sent_more", value.sent_more},
              {"sent_less", value.sent_less}}
             .dump()
      << '\n';
}

std::size_t TranslationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

TranslationResult translate_corpus(const ParallelCorpus& corpus, const std::string& source_lang,
                                   const std::string& target_lang, Translator& translator,
                                   TranslationCache* cache) {
  TranslationResult result;
  result.corpus = corpus;
  if (source_lang == target_lang) return result;
  if (corpus.has_language(target_lang)) {
    throw UsageError("corpus already has a " + target_lang + " slice");
  }

  const auto& source = corpus.slice(source_lang);
  std::vector<SentencePair> translated;
  std::vector<Exclusion> excluded;
  for (const auto& pair : source) {
    std::optional<CachedTranslation> t;
    if (cache) t = cache->get(pair.pair_id, target_lang);
    if (t) {
      ++result.cache_hits;
    } else {
      try {
        t = CachedTranslation{translator.translate(pair.sent_more, source_lang, target_lang),
                              translator.translate(pair.sent_less, source_lang, target_lang)};
      } catch (const std::exception& e) {
        spdlog::warn("translation of {} to {} failed: {}", pair.pair_id, target_lang, e.what());
        result.untranslated.push_back(pair.pair_id);
        excluded.push_back({pair.pair_id, "untranslated"});
        continue;
      }
      if (cache) cache->put(pair.pair_id, source_lang, target_lang, translator.id(), *t);
    }
    if (t->sent_more == t->sent_less) {
      result.collisions.push_back(pair.pair_id);
      excluded.push_back({pair.pair_id, "translation collapsed the pair"});
      continue;
    }
    SentencePair out = pair;
    out.language = target_lang;
    out.sent_more = t->sent_more;
    out.sent_less = t->sent_less;
    translated.push_back(std::move(out));
  }
  // Ids that were already excluded in the source stay excluded in the target.
  for (const auto& e : corpus.excluded(source_lang)) excluded.push_back(e);

  result.corpus.add_slice(target_lang, std::move(translated), std::move(excluded));
  if (!source.empty()) {
    result.untranslated_fraction =
        static_cast<double>(result.untranslated.size()) / static_cast<double>(source.size());
  }
  if (result.untranslated_fraction > 0.05) {
    result.warning = std::to_string(result.untranslated.size()) + " of " +
                     std::to_string(source.size()) + " pairs untranslated into " + target_lang;
    spdlog::warn("{}", *result.warning);
  }
  return result;
}

}  // namespace biaslens
