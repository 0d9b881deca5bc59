#include <algorithm>
#include <cctype>

#include <gtest/gtest.h>

#include "biaslens/corpus.hpp"
#include "biaslens/errors.hpp"
#include "helpers.hpp"

using namespace biaslens;
using testutil::pair;

namespace {

std::vector<std::string> whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<std::string> pick(const std::vector<std::string>& tokens,
                              const std::vector<std::size_t>& idx) {
  std::vector<std::string> out;
  for (const auto i : idx) out.push_back(tokens[i]);
  return out;
}

/// Length of the longest common subsequence by exhaustive dynamic programming.
std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
    }
  }
  return t[a.size()][b.size()];
}

const char* kCsvHeader = ",sent_more,sent_less,stereo_antistereo,bias_type,annotations,anon_writer,anon_annotators\n";

}  // namespace

TEST(AlignPair, HonorificExample) {
  const auto a = align_pair(pair("1", "Mr. Li is a university professor.",
                                 "Mrs. Li is a university professor."),
                            whitespace, "ws");
  const std::vector<std::string> shared{"Li", "is", "a", "university", "professor."};
  EXPECT_EQ(a.unchanged_tokens(), shared);
  EXPECT_EQ(a.modified_tokens(true), std::vector<std::string>{"Mr."});
  EXPECT_EQ(a.modified_tokens(false), std::vector<std::string>{"Mrs."});
}

TEST(AlignPair, HonorificExampleWordTokenizerSplitsFinalPeriod) {
  WordTokenizer tok(Vocabulary{});
  const auto a = align_pair(pair("1", "Mr. Li is a university professor.",
                                 "Mrs. Li is a university professor."),
                            tok);
  const std::vector<std::string> shared{"Li", "is", "a", "university", "professor", "."};
  EXPECT_EQ(a.unchanged_tokens(), shared);
  EXPECT_EQ(a.modified_tokens(true), std::vector<std::string>{"Mr."});
}

TEST(AlignPair, ToySequences) {
  const auto a = align_pair(pair("1", "a b c", "a d e c"), whitespace, "ws");
  EXPECT_EQ(a.unchanged_tokens(), (std::vector<std::string>{"a", "c"}));
  EXPECT_EQ(a.modified_tokens(true), std::vector<std::string>{"b"});
  EXPECT_EQ(a.modified_tokens(false), (std::vector<std::string>{"d", "e"}));
}

TEST(AlignPair, IdenticalTokenizationsHaveNoModifiedSpans) {
  const auto a = align_pair(pair("1", "x y z", "x  y z"), whitespace, "ws");
  EXPECT_TRUE(a.modified_more.empty());
  EXPECT_TRUE(a.modified_less.empty());
  EXPECT_EQ(a.n_unchanged(), 3u);
}

TEST(AlignPair, NothingSharedIsRejected) {
  EXPECT_THROW(align_pair(pair("1", "a b", "c d"), whitespace, "ws"), AlignmentError);
}

TEST(AlignPair, InvariantsOnRandomPairs) {
  std::mt19937 rng(11);
  const std::vector<std::string> alphabet{"a", "b", "c", "d"};
  for (int trial = 0; trial < 300; ++trial) {
    auto sentence = [&] {
      std::string s;
      const int n = 1 + static_cast<int>(rng() % 7);
      for (int i = 0; i < n; ++i) s += alphabet[rng() % alphabet.size()] + " ";
      return s;
    };
    const auto more = sentence();
    const auto less = sentence();
    if (more == less) continue;
    const auto tm = whitespace(more);
    const auto tl = whitespace(less);
    const auto best = lcs_length(tm, tl);
    if (best == 0) continue;
    const auto a = align_pair(pair("p", more, less), whitespace, "ws");
    ASSERT_EQ(a.n_unchanged(), best);
    EXPECT_EQ(pick(tm, a.unchanged_more), pick(tl, a.unchanged_less));
    ASSERT_TRUE(std::is_sorted(a.unchanged_more.begin(), a.unchanged_more.end()));

    // Modified spans are exactly the complement of U.
    std::vector<int> cover(tm.size(), 0);
    for (const auto i : a.unchanged_more) ++cover[i];
    for (const auto& s : a.modified_more) {
      for (auto i = s.begin; i < s.end; ++i) ++cover[i];
    }
    EXPECT_TRUE(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));

    // Swapping sides yields the mirrored alignment.
    const auto b = align_pair(pair("p", more, less).swapped(), whitespace, "ws");
    EXPECT_EQ(b.unchanged_more, a.unchanged_less);
    EXPECT_EQ(b.unchanged_less, a.unchanged_more);
  }
}

TEST(LoadPairs, ThreeRowFilter) {
  const std::string csv = std::string(kCsvHeader) +
                          "0,He cried.,She cried.,stereo,gender,[],a,[]\n"
                          "1,Old men forget.,Young men forget.,stereo,age,[],a,[]\n"
                          "2,Jews pray.,Christians pray.,stereo,religion,[],a,[]\n";
  const auto r = load_pairs_from_string(csv, PairFormat::crowspairs_csv);
  EXPECT_EQ(r.retained, 2u);
  EXPECT_EQ(r.rows_read, 3u);
  EXPECT_EQ(r.dropped.at("age"), 1u);
  EXPECT_EQ(r.corpus.slice("eng").size(), 2u);
}

TEST(LoadPairs, AllRowsFilteredIsAnError) {
  const std::string csv = std::string(kCsvHeader) + "0,Old a.,Young a.,stereo,age,[],a,[]\n";
  EXPECT_THROW(load_pairs_from_string(csv, PairFormat::crowspairs_csv), CorpusError);
}

TEST(LoadPairs, QuotedFieldsAndUnderscoreLabels) {
  const std::string csv = std::string(kCsvHeader) +
                          "7,\"He said, \"\"go\"\".\",\"She said, \"\"go\"\".\",stereo,race_color,[],a,[]\n";
  const auto r = load_pairs_from_string(csv, PairFormat::crowspairs_csv);
  ASSERT_EQ(r.retained, 1u);
  const auto& p = r.corpus.slice("eng").front();
  EXPECT_EQ(p.pair_id, "7");
  EXPECT_EQ(p.sent_more, "He said, \"go\".");
  EXPECT_EQ(p.bias_type, BiasType::race_color);
}

TEST(LoadPairs, MissingColumnIsAnError) {
  EXPECT_THROW(load_pairs_from_string("id,sent_more\n1,x\n", PairFormat::crowspairs_csv), ParseError);
}

TEST(LoadPairs, JsonlRoundTrip) {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "He ran.", "She ran."), pair("2", "Jews pray.", "Muslims pray.",
                                                            BiasType::religion)});
  c.add_slice("zho", {pair("1", "他跑了。", "她跑了。", BiasType::gender, "zho"),
                      pair("2", "犹太人祈祷。", "穆斯林祈祷。", BiasType::religion, "zho")});
  const auto back = load_pairs_from_string(to_pairs_jsonl(c), PairFormat::pairs_jsonl);
  EXPECT_EQ(back.corpus, c);
}

TEST(ParallelCorpus, DuplicateIdsAreRejected) {
  ParallelCorpus c;
  EXPECT_THROW(c.add_slice("eng", {pair("1", "a b", "a c"), pair("1", "x y", "x z")}), CorpusError);
}

TEST(ParallelCorpus, RestrictToCommonIds) {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "a b", "a c"), pair("2", "x y", "x z")});
  c.add_slice("zho", {pair("1", "a b", "a c", BiasType::gender, "zho")});
  EXPECT_THROW(c.validate_parallel(), CorpusError);
  EXPECT_EQ(c.restrict_to_common_ids(), 1u);
  EXPECT_EQ(c.slice("eng").size(), 1u);
  EXPECT_NO_THROW(c.validate_parallel());
}

namespace {

class UpperTranslator : public Translator {
 public:
  std::string id() const override { return "upper"; }
  std::string translate(std::string_view text, const std::string&, const std::string&) override {
    ++calls;
    if (text.find("FAIL") != std::string_view::npos || text.find("fail") != std::string_view::npos) {
      throw std::runtime_error("provider down");
    }
    std::string out(text);
    for (auto& ch : out) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return out;
  }
  int calls = 0;
};

}  // namespace

TEST(Translate, UppercasingTranslatorMapsEveryPair) {
  ParallelCorpus c;
  std::vector<SentencePair> pairs{pair("1", "He ran.", "She ran."), pair("2", "a boy", "a girl")};
  c.add_slice("eng", pairs);
  UpperTranslator t;
  const auto r = translate_corpus(c, "eng", "xxx", t);
  ASSERT_TRUE(r.corpus.has_language("xxx"));
  const auto& out = r.corpus.slice("xxx");
  ASSERT_EQ(out.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto expected = pairs[i].sent_more;
    for (auto& ch : expected) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    EXPECT_EQ(out[i].pair_id, pairs[i].pair_id);
    EXPECT_EQ(out[i].sent_more, expected);
    EXPECT_EQ(out[i].language, "xxx");
  }
}

TEST(Translate, SameLanguageIsNoOp) {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "He ran.", "She ran.")});
  UpperTranslator t;
  const auto r = translate_corpus(c, "eng", "eng", t);
  EXPECT_EQ(r.corpus, c);
  EXPECT_EQ(t.calls, 0);
}

TEST(Translate, CollisionsAndFailuresBecomeExclusions) {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "He ran.", "HE RAN."), pair("2", "fail now", "fail later"),
                      pair("3", "a boy", "a girl")});
  UpperTranslator t;
  const auto r = translate_corpus(c, "eng", "xxx", t);
  EXPECT_EQ(r.corpus.slice("xxx").size(), 1u);
  EXPECT_EQ(r.collisions, std::vector<std::string>{"1"});
  EXPECT_EQ(r.untranslated, std::vector<std::string>{"2"});
  EXPECT_TRUE(r.warning.has_value());
}

TEST(Translate, WarmCacheSkipsTranslator) {
  testutil::TempDir dir("cache");
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "He ran.", "She ran.")});
  {
    TranslationCache cache(dir / "t.jsonl");
    UpperTranslator t;
    translate_corpus(c, "eng", "xxx", t, &cache);
    EXPECT_EQ(t.calls, 2);
  }
  TranslationCache cache(dir / "t.jsonl");
  EXPECT_EQ(cache.size(), 1u);
  UpperTranslator t;
  const auto r = translate_corpus(c, "eng", "xxx", t, &cache);
  EXPECT_EQ(t.calls, 0);
  EXPECT_EQ(r.cache_hits, 1u);
}
