#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "biaslens/errors.hpp"
#include "biaslens/mock_backends.hpp"
#include "biaslens/scoring.hpp"
#include "helpers.hpp"

using namespace biaslens;
using testutil::pair;

namespace {

/// Direct transcription: sum over unchanged positions j of the table entry for
/// (token before j, token at j), BOS before position 0.
double table_oracle(const TableBackend& b, const std::vector<std::string>& tokens,
                    const std::vector<std::size_t>& unchanged) {
  const auto& v = dynamic_cast<const WordTokenizer&>(b.tokenizer()).vocabulary();
  double total = 0.0;
  for (const auto j : unchanged) {
    const TokenId prev = j == 0 ? Vocabulary::kBos : v.id_of(tokens[j - 1]);
    total += b.log_prob(prev, v.id_of(tokens[j]));
  }
  return total;
}

ParallelCorpus two_language_corpus() {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "he is a nurse", "she is a nurse"),
                      pair("2", "the black man ran", "the white man ran", BiasType::race_color),
                      pair("3", "jews pray daily", "christians pray daily", BiasType::religion)});
  c.add_slice("xxx", {pair("1", "he is nurse", "she is nurse", BiasType::gender, "xxx"),
                      pair("2", "black man ran", "white man ran", BiasType::race_color, "xxx"),
                      pair("3", "jews pray", "christians pray", BiasType::religion, "xxx")});
  return c;
}

}  // namespace

TEST(ScoreSentence, UniformGivesCountTimesLogUniform) {
  const auto p = pair("1", "a b c d e f x", "a b c d e f y");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  UniformBackend b(vocabulary_for(c), ModelKind::masked);
  const auto al = align_pair(p, b.tokenizer());
  ASSERT_EQ(al.n_unchanged(), 6u);
  const double ps = score_sentence(p, SentenceSide::more, al, b);
  EXPECT_NEAR(ps, 6.0 * std::log(1.0 / static_cast<double>(b.info().vocab_size)), 1e-12);
}

TEST(ScoreSentence, TableMatchesHandSum) {
  const auto p = pair("1", "w x y z", "w q y z");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  auto b = TableBackend::random(vocabulary_for(c), ModelKind::masked, 17);
  const auto al = align_pair(p, b->tokenizer());
  const auto& v = dynamic_cast<const WordTokenizer&>(b->tokenizer()).vocabulary();
  const double hand = b->log_prob(Vocabulary::kBos, v.id_of("w")) +
                      b->log_prob(v.id_of("x"), v.id_of("y")) +
                      b->log_prob(v.id_of("y"), v.id_of("z"));
  EXPECT_EQ(score_sentence(p, SentenceSide::more, al, *b), hand);
}

TEST(ScoreSentence, CausalUsesPrefixRows) {
  const auto p = pair("1", "w x y z", "w q y z");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  auto b = TableBackend::random(vocabulary_for(c), ModelKind::causal, 4);
  const auto al = align_pair(p, b->tokenizer());
  EXPECT_EQ(score_sentence(p, SentenceSide::less, al, *b),
            table_oracle(*b, al.tokens_less, al.unchanged_less));
}

TEST(ScoreSentence, EmptyUnchangedSetIsRejected) {
  const auto p = pair("1", "a b", "a c");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  UniformBackend b(vocabulary_for(c), ModelKind::masked);
  auto al = align_pair(p, b.tokenizer());
  al.unchanged_more.clear();
  EXPECT_THROW(score_sentence(p, SentenceSide::more, al, b), AlignmentError);
}

TEST(ScoreSentence, ForeignAlignmentIsRejected) {
  const auto p = pair("1", "a b", "a c");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  UniformBackend b(vocabulary_for(c), ModelKind::masked);
  auto al = align_pair(p, b.tokenizer());
  al.tokenizer_id = "other";
  EXPECT_THROW(score_sentence(p, SentenceSide::more, al, b), AlignmentError);
}

TEST(ScoreSentence, AppendingUnchangedTokenAddsItsLogProb) {
  const auto p = pair("1", "w x y", "w q y");
  const auto longer = pair("1", "w x y z", "w q y z");
  ParallelCorpus c;
  c.add_slice("eng", {longer});
  auto b = TableBackend::random(vocabulary_for(c), ModelKind::masked, 23);
  const auto& v = dynamic_cast<const WordTokenizer&>(b->tokenizer()).vocabulary();
  const double base = score_pair(p, *b).ps_more;
  const double ext = score_pair(longer, *b).ps_more;
  EXPECT_NEAR(ext - base, b->log_prob(v.id_of("y"), v.id_of("z")), 1e-12);
}

TEST(ScorePair, SwappingSidesSwapsScores) {
  const auto p = pair("1", "w x y z", "w q r y z");
  ParallelCorpus c;
  c.add_slice("eng", {p});
  auto b = TableBackend::random(vocabulary_for(c), ModelKind::masked, 5);
  const auto s = score_pair(p, *b);
  const auto t = score_pair(p.swapped(), *b);
  EXPECT_EQ(s.ps_more, t.ps_less);
  EXPECT_EQ(s.ps_less, t.ps_more);
}

TEST(ScoreCorpus, UniformBackendIsBiasFree) {
  const auto c = two_language_corpus();
  UniformBackend b(vocabulary_for(c), ModelKind::masked);
  const auto run = score_corpus(c, b);
  ASSERT_EQ(run.scores.size(), 6u);
  for (const auto& s : run.scores) {
    EXPECT_EQ(s.ps_more, s.ps_less) << s.pair_id;
  }
}

TEST(ScoreCorpus, BoostedWordOnlyMovesPairsContainingIt) {
  const auto c = two_language_corpus();
  auto vocab = vocabulary_for(c);
  // Every row is uniform except the row after "black", which favours "man".
  std::vector<double> row(vocab.size(), 0.0);
  row[static_cast<std::size_t>(vocab.id_of("man"))] = 3.0;
  auto b = TableBackend::uniform_except(vocab, ModelKind::masked, {{"black", row}});
  const auto run = score_corpus(c, *b);
  for (const auto& s : run.scores) {
    const auto& src = c.slice(s.language);
    const auto it = std::find_if(src.begin(), src.end(),
                                 [&](const SentencePair& p) { return p.pair_id == s.pair_id; });
    const auto al = align_pair(*it, b->tokenizer());
    EXPECT_EQ(s.ps_more, table_oracle(*b, al.tokens_more, al.unchanged_more));
    EXPECT_EQ(s.ps_less, table_oracle(*b, al.tokens_less, al.unchanged_less));
    if (it->sent_more.find("black") != std::string::npos) {
      EXPECT_NE(s.ps_more, s.ps_less);
    } else {
      EXPECT_EQ(s.ps_more, s.ps_less);
    }
  }
}

TEST(ScoreCorpus, EmptyCorpusIsAnError) {
  UniformBackend b(Vocabulary({"a"}), ModelKind::masked);
  EXPECT_THROW(score_corpus(ParallelCorpus{}, b), CorpusError);
}

TEST(ScoreCorpus, ScoresAreCanonicallySorted) {
  const auto c = two_language_corpus();
  UniformBackend b(vocabulary_for(c), ModelKind::masked);
  const auto run = score_corpus(c, b);
  EXPECT_TRUE(std::is_sorted(run.scores.begin(), run.scores.end(),
                             [](const PairScore& a, const PairScore& b) {
                               return std::tie(a.language, a.pair_id) < std::tie(b.language, b.pair_id);
                             }));
}

TEST(ScoreCorpus, JsonlRoundTrip) {
  const auto c = two_language_corpus();
  auto b = TableBackend::random(vocabulary_for(c), ModelKind::causal, 2);
  const auto run = score_corpus(c, *b);
  EXPECT_EQ(scores_from_jsonl(scores_to_jsonl(run.scores)), run.scores);
}

TEST(ScoreCorpus, RawCausalScoresSumHeadOutput) {
  ParallelCorpus c;
  c.add_slice("eng", {pair("1", "he is kind", "she is kind")});
  LinearBiasConfig cfg;
  cfg.kind = ModelKind::causal;
  cfg.attributes = {{"he", 1.0, "p"}, {"she", -1.0, "p"}};
  LinearBiasBackend b(vocabulary_for(c), cfg);
  ScoringOptions raw;
  raw.raw_causal_scores = true;
  const auto p = c.slice("eng").front();
  const auto al = align_pair(p, b.tokenizer());
  const auto ids = b.tokenizer().encode(p.sent_more).ids;
  double expected = 0.0;
  std::vector<TokenId> prefix{Vocabulary::kBos};
  for (std::size_t j = 0; j < ids.size(); ++j) {
    if (std::find(al.unchanged_more.begin(), al.unchanged_more.end(), j) != al.unchanged_more.end()) {
      expected += b.lm_head(b.causal_hidden(prefix)).scores[static_cast<std::size_t>(ids[j])];
    }
    prefix.push_back(ids[j]);
  }
  EXPECT_NEAR(score_sentence(p, SentenceSide::more, al, b, raw), expected, 1e-12);
}
