#include "biaslens/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include <spdlog/spdlog.h>

#include "biaslens/errors.hpp"
#include "biaslens/text.hpp"
#include "json.hpp"

namespace biaslens {

using nlohmann::json;

double score_sentence(const SentencePair& pair, SentenceSide side, const PairAlignment& alignment,
                      const ModelBackend& backend, const ScoringOptions& options) {
  const bool more = side == SentenceSide::more;
  const auto& tokenizer = backend.tokenizer();
  if (alignment.tokenizer_id != tokenizer.id()) {
    throw AlignmentError("alignment built with tokenizer " + alignment.tokenizer_id +
                         ", backend uses " + tokenizer.id());
  }
  const auto enc = tokenizer.encode(more ? pair.sent_more : pair.sent_less);
  if (enc.pieces != (more ? alignment.tokens_more : alignment.tokens_less)) {
    throw AlignmentError("alignment does not match the tokenization of pair " + pair.pair_id);
  }
  const auto& unchanged = alignment.unchanged(more);
  if (unchanged.empty()) throw AlignmentError("pair " + pair.pair_id + " has no unchanged tokens");

  double ps = 0.0;
  if (backend.kind() == ModelKind::masked) {
    for (const auto j : unchanged) {
      ps += backend.masked_logprobs(enc.ids, j).log_probs[static_cast<std::size_t>(enc.ids[j])];
    }
    return ps;
  }

  std::vector<TokenId> seq;
  seq.reserve(enc.ids.size() + 1);
  if (const auto bos = tokenizer.bos()) seq.push_back(*bos);
  const std::size_t offset = seq.size();
  seq.insert(seq.end(), enc.ids.begin(), enc.ids.end());
  for (const auto j : unchanged) {
    const std::span<const TokenId> prefix(seq.data(), j + offset);
    const auto target = static_cast<std::size_t>(enc.ids[j]);
    ps += options.raw_causal_scores ? backend.causal_raw_scores(prefix)[target]
                                    : backend.causal_logprobs(prefix).log_probs[target];
  }
  return ps;
}

PairScore score_pair(const SentencePair& pair, const ModelBackend& backend,
                     const ScoringOptions& options) {
  const auto alignment = align_pair(pair, backend.tokenizer());
  PairScore s;
  s.pair_id = pair.pair_id;
  s.language = pair.language;
  s.bias_type = pair.bias_type;
  s.ps_more = score_sentence(pair, SentenceSide::more, alignment, backend, options);
  s.ps_less = score_sentence(pair, SentenceSide::less, alignment, backend, options);
  s.n_unchanged = alignment.n_unchanged();
  if (!std::isfinite(s.ps_more) || !std::isfinite(s.ps_less)) {
    throw BackendError("non-finite score for pair " + pair.pair_id, 1, -1, false);
  }
  return s;
}

ScoreRun score_corpus(const ParallelCorpus& corpus, const ModelBackend& backend,
                      const ScoringOptions& options) {
  if (corpus.empty()) throw CorpusError("cannot score an empty corpus");

  std::vector<const SentencePair*> work;
  for (const auto& lang : corpus.languages()) {
    for (const auto& p : corpus.slice(lang)) work.push_back(&p);
  }

  struct Outcome {
    std::optional<PairScore> score;
    std::string error;
  };
  std::vector<Outcome> outcomes(work.size());
  auto run_range = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < work.size(); i += step) {
      try {
        outcomes[i].score = score_pair(*work[i], backend, options);
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
      }
    }
  };

  const std::size_t threads =
      backend.info().supports_concurrent
          ? std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16)
          : 1;
  if (threads > 1 && work.size() > 1) {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run_range, t, threads);
  } else {
    run_range(0, 1);
  }

  ScoreRun run;
  std::map<std::string, std::size_t> skipped_per_language;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (outcomes[i].score) {
      run.scores.push_back(std::move(*outcomes[i].score));
    } else {
      run.skipped.push_back({work[i]->pair_id, work[i]->language, outcomes[i].error});
      ++skipped_per_language[work[i]->language];
    }
  }
  auto key = [](const auto& x) { return std::tie(x.language, x.pair_id); };
  std::sort(run.scores.begin(), run.scores.end(),
            [&](const PairScore& a, const PairScore& b) { return key(a) < key(b); });
  std::sort(run.skipped.begin(), run.skipped.end(),
            [&](const SkippedPair& a, const SkippedPair& b) { return key(a) < key(b); });

  for (const auto& lang : corpus.languages()) {
    const auto total = corpus.slice(lang).size();
    const auto skipped = skipped_per_language[lang];
    if (total > 0 && skipped == total) {
      throw CorpusError("every pair of " + lang + " was skipped; first reason: " +
                        std::find_if(run.skipped.begin(), run.skipped.end(),
                                     [&](const SkippedPair& s) { return s.language == lang; })
                            ->reason);
    }
    if (total > 0 && 10 * skipped > total) {
      run.warnings.push_back(std::to_string(skipped) + " of " + std::to_string(total) + " " +
                             lang + " pairs skipped");
      spdlog::warn("{}", run.warnings.back());
    }
  }
  return run;
}

std::string scores_to_jsonl(const std::vector<PairScore>& scores) {
  std::string out;
  for (const auto& s : scores) {
    out += json{{"pair_id", s.pair_id},
                {"language", s.language},
                {"bias_type", to_string(s.bias_type)},
                {"ps_more", s.ps_more},
                {"ps_less", s.ps_less},
                {"n_unchanged", s.n_unchanged}}
               .dump();
    out += '\n';
  }
  return out;
}

std::vector<PairScore> scores_from_jsonl(std::string_view content) {
  std::vector<PairScore> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    auto end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    const auto line = text::trim(content.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) continue;
    try {
      const auto obj = json::parse(line);
      PairScore s;
      s.pair_id = obj.at("pair_id").get<std::string>();
      s.language = obj.at("language").get<std::string>();
      s.bias_type = parse_bias_type(obj.at("bias_type").get<std::string>());
      s.ps_more = obj.at("ps_more").get<double>();
      s.ps_less = obj.at("ps_less").get<double>();
      s.n_unchanged = obj.at("n_unchanged").get<std::size_t>();
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), "line " + std::to_string(line_no));
    }
  }
  return out;
}

}  // namespace biaslens
