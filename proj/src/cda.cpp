#include "biaslens/cda.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "biaslens/errors.hpp"
#include "biaslens/text.hpp"
#include "json.hpp"

namespace biaslens {

using nlohmann::json;

namespace {

bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’'; }

/// Letters and digits only; apostrophes end a head word so "he's" matches "he".
bool is_term_char(char32_t c) { return text::is_word_char(c) && !is_apostrophe(c); }

std::string head_word(std::string_view s) {
  const auto cps = text::decode_utf8(s);
  std::size_t end = 0;
  for (const auto& cp : cps) {
    if (!is_term_char(cp.value)) break;
    end = cp.end;
  }
  return std::string(s.substr(0, end));
}

std::string apply_case(std::string_view matched, const std::string& replacement) {
  std::size_t upper = 0;
  bool lower = false;
  for (const char c : matched) {
    if (text::is_ascii_upper(c)) ++upper;
    if (c >= 'a' && c <= 'z') lower = true;
  }
  if (!lower && upper >= 2) return text::ascii_upper(replacement);
  if (!matched.empty() && text::is_ascii_upper(matched.front())) {
    auto out = replacement;
    if (!out.empty() && out.front() >= 'a' && out.front() <= 'z') out.front() -= 'a' - 'A';
    return out;
  }
  return replacement;
}

std::string line_column(std::string_view content, std::size_t byte) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < std::min(byte, content.size()); ++i) {
    if (content[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return fmt::format("line {}, column {}", line, column);
}

}  // namespace

AttributeLexicon::AttributeLexicon(BiasType bias_type, std::vector<std::vector<std::string>> tuples,
                                   CasingPolicy casing)
    : bias_type_(bias_type), tuples_(std::move(tuples)), casing_(casing) {
  if (tuples_.empty()) throw UsageError("lexicon for " + to_string(bias_type_) + " is empty");
  arity_ = tuples_.front().size();
  if (arity_ < 2) throw UsageError("lexicon tuples need at least two entries");

  auto normalize = [&](const std::string& w) {
    return casing_ == CasingPolicy::preserve ? text::ascii_lower(w) : w;
  };
  std::set<std::string> seen;
  for (std::size_t t = 0; t < tuples_.size(); ++t) {
    if (tuples_[t].size() != arity_) {
      throw UsageError(fmt::format("lexicon tuple {} has {} entries, expected {}", t,
                                   tuples_[t].size(), arity_));
    }
    for (std::size_t s = 0; s < arity_; ++s) {
      const auto key = normalize(tuples_[t][s]);
      if (head_word(key).empty()) {
        throw UsageError(fmt::format("lexicon entry '{}' does not start with a word", key));
      }
      if (!seen.insert(key).second) {
        throw UsageError("lexicon word '" + tuples_[t][s] + "' appears more than once");
      }
      by_head_[head_word(key)].push_back({key, t, s});
    }
  }
  for (auto& [head, entries] : by_head_) {
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.key.size() > b.key.size();
    });
  }
}

std::string AttributeLexicon::id() const {
  std::string serialized = casing_ == CasingPolicy::exact ? "exact" : "preserve";
  for (const auto& t : tuples_) {
    for (const auto& w : t) serialized += "\x1f" + w;
    serialized += "\x1e";
  }
  return fmt::format("{}:{}x{}:{:016x}", to_string(bias_type_), tuples_.size(), arity_,
                     text::fnv1a(serialized));
}

std::vector<TermMatch> AttributeLexicon::find(std::string_view input) const {
  const std::string folded =
      casing_ == CasingPolicy::preserve ? text::ascii_lower(input) : std::string(input);
  const auto cps = text::decode_utf8(input);
  std::vector<char> starts(input.size() + 1, 0);
  std::vector<char> term_at(input.size() + 1, 0);
  for (const auto& cp : cps) {
    starts[cp.begin] = 1;
    term_at[cp.begin] = is_term_char(cp.value) ? 1 : 0;
  }
  starts[input.size()] = 1;

  std::vector<TermMatch> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    const bool word_start =
        is_term_char(cps[i].value) && (i == 0 || !text::is_word_char(cps[i - 1].value));
    if (!word_start) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && is_term_char(cps[j].value)) ++j;
    const std::size_t begin = cps[i].begin;
    const std::size_t head_end = j < cps.size() ? cps[j].begin : input.size();
    auto it = by_head_.find(folded.substr(begin, head_end - begin));
    bool matched = false;
    if (it != by_head_.end()) {
      for (const auto& e : it->second) {
        const std::size_t end = begin + e.key.size();
        if (end > input.size() || !starts[end] || term_at[end]) continue;
        if (folded.compare(begin, e.key.size(), e.key) != 0) continue;
        out.push_back({begin, end, e.tuple_index, e.slot});
        while (i < cps.size() && cps[i].begin < end) ++i;
        matched = true;
        break;
      }
    }
    if (!matched) i = j;
  }
  return out;
}

std::vector<AttributeLexicon> parse_lexicons(std::string_view json_text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed lexicon JSON", line_column(json_text, e.byte == 0 ? 0 : e.byte - 1));
  }
  if (!doc.is_object()) throw ParseError("lexicon file must be a JSON object", "line 1, column 1");

  std::vector<AttributeLexicon> out;
  for (const auto& [label, value] : doc.items()) {
    const auto type = parse_bias_type(label);
    CasingPolicy casing = CasingPolicy::preserve;
    const nlohmann::ordered_json* tuples = &value;
    if (value.is_object()) {
      const auto c = value.value("casing", std::string("preserve"));
      if (c == "exact") {
        casing = CasingPolicy::exact;
      } else if (c != "preserve") {
        throw UsageError("unknown casing policy '" + c + "' for " + label);
      }
      if (!value.contains("tuples")) throw UsageError("lexicon " + label + " has no tuples");
      tuples = &value.at("tuples");
    }
    if (!tuples->is_array()) throw UsageError("lexicon " + label + " must be a list of tuples");
    std::vector<std::vector<std::string>> rows;
    for (const auto& t : *tuples) {
      if (!t.is_array()) throw UsageError("lexicon " + label + " contains a non-list tuple");
      std::vector<std::string> row;
      for (const auto& w : t) {
        if (!w.is_string()) throw UsageError("lexicon " + label + " contains a non-string entry");
        row.push_back(w.get<std::string>());
      }
      rows.push_back(std::move(row));
    }
    out.emplace_back(type, std::move(rows), casing);
  }
  if (out.empty()) throw UsageError("lexicon file defines no bias types");
  return out;
}

std::vector<AttributeLexicon> load_lexicons(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open lexicon file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_lexicons(buffer.str());
  } catch (const ParseError& e) {
    throw ParseError("malformed lexicon JSON in " + path.string(), e.location());
  }
}

std::vector<Counterfactual> counterfactuals(std::string_view input, const AttributeLexicon& lexicon) {
  const auto matches = lexicon.find(input);
  if (matches.empty()) return {};
  const auto d = lexicon.arity();
  std::vector<Counterfactual> out;
  for (std::size_t k = 1; k < d; ++k) {
    Counterfactual cf;
    cf.offset = k;
    std::size_t pos = 0;
    for (const auto& m : matches) {
      const auto to = (m.slot + k) % d;
      const auto& replacement = lexicon.tuples()[m.tuple_index][to];
      cf.text.append(input.substr(pos, m.begin - pos));
      const auto matched = input.substr(m.begin, m.end - m.begin);
      cf.text += lexicon.casing() == CasingPolicy::preserve ? apply_case(matched, replacement)
                                                            : replacement;
      cf.replacements.push_back({m.tuple_index, m.slot, to});
      pos = m.end;
    }
    cf.text.append(input.substr(pos));
    out.push_back(std::move(cf));
  }
  return out;
}

std::vector<std::string> swap_terms(std::string_view input, const AttributeLexicon& lexicon) {
  std::vector<std::string> out;
  for (auto& cf : counterfactuals(input, lexicon)) out.push_back(std::move(cf.text));
  return out;
}

// --- streams -----------------------------------------------------------------

StreamFormat parse_stream_format(std::string_view name) {
  if (name == "text" || name == "txt") return StreamFormat::text;
  if (name == "jsonl") return StreamFormat::jsonl;
  throw UsageError("unknown stream format '" + std::string(name) + "'");
}

LineSource::LineSource(std::istream& in, StreamFormat format, std::string name)
    : in_(in), format_(format), name_(std::move(name)) {}

std::string LineSource::position() const { return name_ + ":" + std::to_string(line_); }

namespace {

bool read_line(std::istream& in, std::string& line, std::size_t& line_no, const std::string& name) {
  while (true) {
    if (!std::getline(in, line)) {
      if (in.bad()) throw CorpusError("read failure at " + name + ":" + std::to_string(line_no + 1));
      return false;
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!text::trim(line).empty()) return true;
  }
}

std::string id_field(const json& obj, std::initializer_list<const char*> keys, std::size_t line) {
  for (const char* k : keys) {
    if (!obj.contains(k)) continue;
    const auto& v = obj.at(k);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    return v.dump();
  }
  return std::to_string(line);
}

json parse_json_line(const std::string& line, const std::string& where) {
  try {
    auto obj = json::parse(line);
    if (!obj.is_object()) throw ParseError("expected a JSON object", where);
    if (!obj.contains("text") || !obj.at("text").is_string()) {
      throw ParseError("record has no string 'text' field", where);
    }
    return obj;
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON record", where + ", column " + std::to_string(e.byte));
  }
}

}  // namespace

std::optional<TextRecord> LineSource::next() {
  std::string line;
  if (!read_line(in_, line, line_, name_)) return std::nullopt;
  if (format_ == StreamFormat::text) return TextRecord{std::to_string(line_), line};
  const auto obj = parse_json_line(line, position());
  return TextRecord{id_field(obj, {"id", "doc_id"}, line_), obj.at("text").get<std::string>()};
}

namespace {

const char* kind_name(Provenance::Kind k) {
  return k == Provenance::Kind::original ? "original" : "counterfactual";
}

}  // namespace

std::string to_jsonl(const AugmentedRecord& r) {
  json reps = json::array();
  for (const auto& x : r.provenance.replacements) {
    reps.push_back({{"tuple", x.tuple_index}, {"from", x.from_slot}, {"to", x.to_slot}});
  }
  json prov{{"kind", kind_name(r.provenance.kind)}, {"source_seq", r.provenance.source_seq}};
  if (r.provenance.kind == Provenance::Kind::counterfactual) {
    prov["bias_type"] = r.provenance.bias_type ? to_string(*r.provenance.bias_type) : "";
    prov["offset"] = r.provenance.offset;
    prov["replacements"] = reps;
  }
  return json{{"seq", r.seq}, {"doc_id", r.doc_id}, {"text", r.text}, {"provenance", prov}}.dump();
}

AugmentedRecord augmented_record_from_json(std::string_view line) {
  try {
    const auto j = json::parse(line);
    AugmentedRecord r;
    r.seq = j.at("seq").get<std::size_t>();
    r.doc_id = j.at("doc_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    const auto& p = j.at("provenance");
    const auto kind = p.at("kind").get<std::string>();
    if (kind == "original") {
      r.provenance.kind = Provenance::Kind::original;
    } else if (kind == "counterfactual") {
      r.provenance.kind = Provenance::Kind::counterfactual;
    } else {
      throw ParseError("unknown provenance kind '" + kind + "'", "provenance");
    }
    r.provenance.source_seq = p.at("source_seq").get<std::size_t>();
    if (r.provenance.kind == Provenance::Kind::counterfactual) {
      r.provenance.bias_type = parse_bias_type(p.at("bias_type").get<std::string>());
      r.provenance.offset = p.at("offset").get<std::size_t>();
      for (const auto& x : p.at("replacements")) {
        r.provenance.replacements.push_back({x.at("tuple").get<std::size_t>(),
                                             x.at("from").get<std::size_t>(),
                                             x.at("to").get<std::size_t>()});
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), "augmented record");
  }
}

namespace {

AugmentStats augment_one(const TextRecord& rec, std::size_t& seq,
                         std::span<const AttributeLexicon> lexicons, const RecordSink& sink,
                         AugmentStats stats) {
  const std::size_t source = seq++;
  AugmentedRecord original;
  original.seq = source;
  original.doc_id = rec.doc_id;
  original.text = rec.text;
  original.provenance.source_seq = source;
  sink(original);
  ++stats.originals;

  bool any = false;
  for (const auto& lex : lexicons) {
    for (auto& cf : counterfactuals(rec.text, lex)) {
      any = true;
      AugmentedRecord r;
      r.seq = seq++;
      r.doc_id = rec.doc_id;
      r.text = std::move(cf.text);
      r.provenance.kind = Provenance::Kind::counterfactual;
      r.provenance.source_seq = source;
      r.provenance.bias_type = lex.bias_type();
      r.provenance.offset = cf.offset;
      r.provenance.replacements = std::move(cf.replacements);
      sink(r);
      ++stats.counterfactuals;
    }
  }
  if (any) ++stats.matched;
  return stats;
}

}  // namespace

AugmentStats augment_corpus(LineSource& source, std::span<const AttributeLexicon> lexicons,
                            const RecordSink& sink) {
  if (lexicons.empty()) throw UsageError("augmentation needs at least one lexicon");
  AugmentStats stats;
  std::size_t seq = 0;
  while (auto rec = source.next()) stats = augment_one(*rec, seq, lexicons, sink, stats);
  return stats;
}

AugmentedCorpus augment_texts(const std::vector<std::string>& texts,
                              std::span<const AttributeLexicon> lexicons, std::string source_id) {
  if (lexicons.empty()) throw UsageError("augmentation needs at least one lexicon");
  AugmentedCorpus out;
  out.source_id = std::move(source_id);
  std::size_t seq = 0;
  AugmentStats stats;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    stats = augment_one({std::to_string(i + 1), texts[i]}, seq, lexicons,
                        [&](const AugmentedRecord& r) { out.records.push_back(r); }, stats);
  }
  return out;
}

// --- Wikipedia sampling --------------------------------------------------------

ArticleSource::ArticleSource(std::istream& in, StreamFormat format, std::string name)
    : in_(in), format_(format), name_(std::move(name)) {}

std::optional<Article> ArticleSource::next() {
  std::string line;
  if (!read_line(in_, line, line_, name_)) return std::nullopt;
  if (format_ == StreamFormat::text) return Article{std::to_string(line_), "", line};
  const auto obj = parse_json_line(line, name_ + ":" + std::to_string(line_));
  Article a;
  a.id = id_field(obj, {"id"}, line_);
  a.title = obj.contains("title") && obj.at("title").is_string() ? obj.at("title").get<std::string>()
                                                                 : std::string();
  a.text = obj.at("text").get<std::string>();
  return a;
}

double sample_key(std::string_view article_id, std::uint64_t seed) {
  return text::unit_interval(text::splitmix64(seed ^ text::fnv1a(article_id)));
}

namespace {

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw UsageError(fmt::format("sample fraction must be in (0, 1], got {}", fraction));
  }
}

}  // namespace

SampleStats sample_wikipedia(ArticleSource& dump, double fraction, std::uint64_t seed,
                             const std::function<void(const Article&)>& sink) {
  check_fraction(fraction);
  SampleStats stats{0, 0, fraction, seed};
  while (auto a = dump.next()) {
    ++stats.seen;
    if (sample_key(a->id, seed) < fraction) {
      sink(*a);
      ++stats.kept;
    }
  }
  if (stats.seen == 0) throw CorpusError("Wikipedia dump contains no articles");
  return stats;
}

SampleStats sample_wikipedia_exact(const std::function<std::unique_ptr<std::istream>()>& open,
                                   StreamFormat format, double fraction, std::uint64_t seed,
                                   const std::function<void(const Article&)>& sink) {
  check_fraction(fraction);
  std::vector<std::pair<double, std::size_t>> keys;
  {
    auto in = open();
    ArticleSource src(*in, format);
    while (auto a = src.next()) keys.emplace_back(sample_key(a->id, seed), keys.size());
  }
  if (keys.empty()) throw CorpusError("Wikipedia dump contains no articles");

  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keys.size())));
  std::vector<char> keep(keys.size(), 0);
  if (target > 0) {
    std::nth_element(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(target - 1), keys.end());
    for (std::size_t i = 0; i < target; ++i) keep[keys[i].second] = 1;
  }

  SampleStats stats{0, 0, fraction, seed};
  auto in = open();
  ArticleSource src(*in, format);
  while (auto a = src.next()) {
    if (stats.seen >= keep.size()) throw CorpusError("Wikipedia dump changed between passes");
    if (keep[stats.seen++]) {
      sink(*a);
      ++stats.kept;
    }
  }
  if (stats.seen != keep.size()) throw CorpusError("Wikipedia dump changed between passes");
  return stats;
}

std::vector<std::string> split_sentences(std::string_view input) {
  auto is_terminal = [](char32_t c) {
    return c == U'.' || c == U'!' || c == U'?' || c == U'。' || c == U'！' ||
           c == U'？';
  };
  auto is_closer = [](char32_t c) {
    return c == U'"' || c == U'\'' || c == U')' || c == U'”' || c == U'’';
  };
  const auto cps = text::decode_utf8(input);
  std::vector<std::string> out;
  std::size_t start = 0;
  auto emit = [&](std::size_t end) {
    auto s = text::trim(input.substr(start, end - start));
    if (!s.empty()) out.push_back(std::move(s));
    start = end;
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    if (!is_terminal(cps[i].value)) continue;
    std::size_t j = i + 1;
    while (j < cps.size() && (is_terminal(cps[j].value) || is_closer(cps[j].value))) ++j;
    const bool wide = cps[i].value > 0x7F;
    if (j == cps.size() || wide || text::is_space(cps[j].value)) {
      emit(j == cps.size() ? input.size() : cps[j].begin);
      i = j - 1;
    }
  }
  emit(input.size());
  return out;
}

}  // namespace biaslens
