#include "biaslens/mock_backends.hpp"

#include <cmath>
#include <set>

#include "biaslens/errors.hpp"
#include "biaslens/text.hpp"

namespace biaslens {

Vocabulary vocabulary_for(const ParallelCorpus& corpus, const std::vector<std::string>& extra) {
  Vocabulary vocab;
  for (const auto& lang : corpus.languages()) {
    for (const auto& pair : corpus.slice(lang)) {
      for (const auto& w : WordTokenizer::segment(pair.sent_more)) vocab.add(w);
      for (const auto& w : WordTokenizer::segment(pair.sent_less)) vocab.add(w);
    }
  }
  for (const auto& w : extra) {
    for (const auto& piece : WordTokenizer::segment(w)) vocab.add(piece);
  }
  return vocab;
}

Eigen::VectorXd hashed_eigen(std::uint64_t seed, std::string_view key, std::size_t dim) {
  const auto v = text::hashed_vector(seed, key, dim);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd orthogonal_to(const Eigen::VectorXd& v, const Eigen::VectorXd& b) {
  return v - v.dot(b) * b;
}

// --- UniformBackend ----------------------------------------------------------

UniformBackend::UniformBackend(Vocabulary vocab, ModelKind kind, std::size_t hidden_dim,
                               std::uint64_t seed, std::string model_id)
    : ModelBackend({std::move(model_id), kind, vocab.size(), hidden_dim, true}),
      tokenizer_(std::move(vocab)),
      seed_(seed) {
  if (hidden_dim == 0) throw UsageError("hidden_dim must be positive");
}

Eigen::VectorXd UniformBackend::token_vector(const std::string& word) const {
  return hashed_eigen(seed_, word, info().hidden_dim);
}

std::vector<Eigen::VectorXd> UniformBackend::token_hidden(std::span<const TokenId> tokens) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(tokens.size());
  for (const auto id : tokens) out.push_back(token_vector(tokenizer_.vocabulary().word(id)));
  return out;
}

Eigen::VectorXd UniformBackend::masked_hidden(std::span<const TokenId> tokens,
                                              std::size_t position) const {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(info().hidden_dim));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != position) h += token_vector(tokenizer_.vocabulary().word(tokens[i]));
  }
  return h;
}

Eigen::VectorXd UniformBackend::causal_hidden(std::span<const TokenId> prefix) const {
  return masked_hidden(prefix, prefix.size());
}

HeadOutput UniformBackend::lm_head(const Eigen::VectorXd&) const {
  return {std::vector<double>(info().vocab_size, 0.0), false};
}

// --- TableBackend ------------------------------------------------------------

TableBackend::TableBackend(Vocabulary vocab, ModelKind kind,
                           std::vector<std::vector<double>> log_probs, std::string model_id)
    : ModelBackend({std::move(model_id), kind, vocab.size(), 0, true}),
      tokenizer_(std::move(vocab)),
      table_(std::move(log_probs)) {
  const auto v = info().vocab_size;
  if (table_.size() != v) throw UsageError("table must have one row per vocabulary entry");
  for (auto& row : table_) {
    if (row.size() != v) throw UsageError("table rows must span the vocabulary");
    row = log_softmax(row);
  }
}

std::shared_ptr<TableBackend> TableBackend::random(Vocabulary vocab, ModelKind kind,
                                                   std::uint64_t seed, std::string model_id) {
  const auto v = vocab.size();
  std::vector<std::vector<double>> rows(v, std::vector<double>(v));
  for (std::size_t r = 0; r < v; ++r) {
    const auto u = text::hashed_vector(seed, "row:" + std::to_string(r), v);
    for (std::size_t c = 0; c < v; ++c) rows[r][c] = std::log(0.05 + (u[c] + 1.0) / 2.0);
  }
  return std::make_shared<TableBackend>(std::move(vocab), kind, std::move(rows),
                                        std::move(model_id));
}

std::shared_ptr<TableBackend> TableBackend::uniform_except(
    Vocabulary vocab, ModelKind kind, const std::map<std::string, std::vector<double>>& rows,
    std::string model_id) {
  const auto v = vocab.size();
  std::vector<std::vector<double>> table(v, std::vector<double>(v, 0.0));
  for (const auto& [word, row] : rows) {
    const auto id = vocab.id_of(word);
    if (id == Vocabulary::kUnk) throw UsageError("word '" + word + "' not in vocabulary");
    table[static_cast<std::size_t>(id)] = row;
  }
  return std::make_shared<TableBackend>(std::move(vocab), kind, std::move(table),
                                        std::move(model_id));
}

const std::vector<double>& TableBackend::row(TokenId previous) const {
  if (previous < 0 || static_cast<std::size_t>(previous) >= table_.size()) {
    throw UsageError("token id outside table");
  }
  return table_[static_cast<std::size_t>(previous)];
}

double TableBackend::log_prob(TokenId previous, TokenId next) const {
  const auto& r = row(previous);
  if (next < 0 || static_cast<std::size_t>(next) >= r.size()) {
    throw UsageError("token id outside table");
  }
  return r[static_cast<std::size_t>(next)];
}

HeadOutput TableBackend::masked_head(std::span<const TokenId> tokens,
                                     std::size_t position) const {
  const TokenId prev = position == 0 ? Vocabulary::kBos : tokens[position - 1];
  return {row(prev), true};
}

HeadOutput TableBackend::causal_head(std::span<const TokenId> prefix) const {
  return {row(prefix.back()), true};
}

// --- LinearBiasBackend -------------------------------------------------------

LinearBiasBackend::LinearBiasBackend(Vocabulary vocab, LinearBiasConfig config)
    : ModelBackend({config.model_id, config.kind, vocab.size(), config.hidden_dim, true}),
      tokenizer_(std::move(vocab)),
      config_(std::move(config)) {
  const auto dim = config_.hidden_dim;
  if (dim < 2) throw UsageError("linear bias mock needs hidden_dim >= 2");
  const auto& words = tokenizer_.vocabulary().words();
  const auto v = words.size();

  direction_ = config_.direction.size() > 0 ? config_.direction
                                            : hashed_eigen(config_.seed, "<bias-direction>", dim);
  if (static_cast<std::size_t>(direction_.size()) != dim) {
    throw UsageError("bias direction has the wrong dimension");
  }
  const double norm = direction_.norm();
  if (!(norm > 0.0)) throw UsageError("bias direction must be non-zero");
  direction_ /= norm;
  config_.direction = direction_;

  std::map<std::string, const AttributeTerm*> attributes;
  for (const auto& term : config_.attributes) attributes[term.word] = &term;

  context_base_ = orthogonal_to(hashed_eigen(config_.seed, "<context>", dim), direction_);
  token_base_.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(v));
  head_rows_.resize(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(dim));
  bias_coeff_.resize(static_cast<Eigen::Index>(v));
  weights_.assign(v, 0.0);
  for (std::size_t i = 0; i < v; ++i) {
    const auto& word = words[i];
    std::string key = "tok:" + word;
    if (auto it = attributes.find(word); it != attributes.end()) {
      weights_[i] = it->second->weight;
      key = "group:" + it->second->group;
    }
    const auto col = static_cast<Eigen::Index>(i);
    token_base_.col(col) = orthogonal_to(hashed_eigen(config_.seed, key, dim), direction_);
    head_rows_.row(col) =
        orthogonal_to(hashed_eigen(config_.seed, "head:" + word, dim), direction_).transpose();
    bias_coeff_(col) = text::hashed_vector(config_.seed, "gain:" + word, 1).front();
  }
}

double LinearBiasBackend::attribute_weight(TokenId id) const {
  return weights_.at(static_cast<std::size_t>(id));
}

Eigen::VectorXd LinearBiasBackend::context_state(std::span<const TokenId> tokens,
                                                 std::size_t skip) const {
  double along = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i != skip) along += weights_.at(static_cast<std::size_t>(tokens[i]));
  }
  return context_base_ + config_.strength * along * direction_;
}

Eigen::VectorXd LinearBiasBackend::masked_hidden(std::span<const TokenId> tokens,
                                                 std::size_t position) const {
  return context_state(tokens, position);
}

Eigen::VectorXd LinearBiasBackend::causal_hidden(std::span<const TokenId> prefix) const {
  return context_state(prefix, prefix.size());
}

std::vector<Eigen::VectorXd> LinearBiasBackend::token_hidden(
    std::span<const TokenId> tokens) const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(tokens.size());
  for (const auto id : tokens) {
    const auto i = static_cast<std::size_t>(id);
    out.push_back(token_base_.col(static_cast<Eigen::Index>(i)) +
                  config_.strength * weights_.at(i) * direction_);
  }
  return out;
}

HeadOutput LinearBiasBackend::lm_head(const Eigen::VectorXd& hidden) const {
  const Eigen::VectorXd logits = config_.head_scale * (head_rows_ * hidden) +
                                 config_.bias_gain * direction_.dot(hidden) * bias_coeff_;
  return {std::vector<double>(logits.data(), logits.data() + logits.size()), false};
}

std::shared_ptr<LinearBiasBackend> LinearBiasBackend::with_strength(double strength,
                                                                    std::string model_id) const {
  auto cfg = config_;
  cfg.strength = strength;
  cfg.model_id = std::move(model_id);
  return std::make_shared<LinearBiasBackend>(tokenizer_.vocabulary(), std::move(cfg));
}

}  // namespace biaslens
