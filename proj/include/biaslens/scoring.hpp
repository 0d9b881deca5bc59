#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "biaslens/backend.hpp"
#include "biaslens/corpus.hpp"

namespace biaslens {

enum class SentenceSide { more, less };

struct ScoringOptions {
  /// Causal backends: sum raw LM-head scores instead of log-probabilities.
  bool raw_causal_scores = false;
};

/// Pseudo-log-likelihood scores of both sentences of one pair.
struct PairScore {
  std::string pair_id;
  std::string language;
  BiasType bias_type = BiasType::gender;
  double ps_more = 0.0;
  double ps_less = 0.0;
  std::size_t n_unchanged = 0;

  bool operator==(const PairScore&) const = default;
};

struct SkippedPair {
  std::string pair_id;
  std::string language;
  std::string reason;
};

struct ScoreRun {
  /// Sorted by (language, pair_id).
  std::vector<PairScore> scores;
  std::vector<SkippedPair> skipped;
  std::vector<std::string> warnings;
};

/// Sum over unchanged tokens u of log P(u | context). Masked backends see the
/// whole sentence with u masked; causal backends see the tokens before u (after
/// BOS). Modified tokens are conditioned on, never scored.
/// Throws AlignmentError when the alignment does not match the backend's
/// tokenization or U is empty.
double score_sentence(const SentencePair& pair, SentenceSide side, const PairAlignment& alignment,
                      const ModelBackend& backend, const ScoringOptions& options = {});

/// Aligns under the backend's tokenizer and scores both sides.
PairScore score_pair(const SentencePair& pair, const ModelBackend& backend,
                     const ScoringOptions& options = {});

/// Scores every pair of every language. Failing pairs go to the skip list.
/// Warns when a language skips more than 10% of its pairs; throws CorpusError
/// when the corpus is empty or a language loses every pair.
ScoreRun score_corpus(const ParallelCorpus& corpus, const ModelBackend& backend,
                      const ScoringOptions& options = {});

/// One JSON object per line with the PairScore field names.
std::string scores_to_jsonl(const std::vector<PairScore>& scores);
std::vector<PairScore> scores_from_jsonl(std::string_view content);

}  // namespace biaslens
