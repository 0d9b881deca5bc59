#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "biaslens/backend.hpp"
#include "biaslens/corpus.hpp"
#include "biaslens/tokenizer.hpp"

namespace biaslens {

/// Vocabulary covering every word of every sentence in the corpus plus `extra`,
/// in first-seen order.
Vocabulary vocabulary_for(const ParallelCorpus& corpus, const std::vector<std::string>& extra = {});

/// Every position gets the uniform distribution. Hidden states exist (hash-seeded
/// token vectors) but the head ignores them, so the backend is bias-free.
class UniformBackend : public ModelBackend, public HiddenStateAccess {
 public:
  UniformBackend(Vocabulary vocab, ModelKind kind, std::size_t hidden_dim = 8,
                 std::uint64_t seed = 1, std::string model_id = "mock-uniform");

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  const HiddenStateAccess* hidden_access() const override { return this; }

  Eigen::VectorXd masked_hidden(std::span<const TokenId> tokens,
                                std::size_t position) const override;
  Eigen::VectorXd causal_hidden(std::span<const TokenId> prefix) const override;
  std::vector<Eigen::VectorXd> token_hidden(std::span<const TokenId> tokens) const override;
  HeadOutput lm_head(const Eigen::VectorXd& hidden) const override;

  /// The fixed vector assigned to `word`.
  Eigen::VectorXd token_vector(const std::string& word) const;

 private:
  WordTokenizer tokenizer_;
  std::uint64_t seed_;
};

/// Table-driven bigram model: the distribution at a position is the table row
/// of the preceding token (the BOS row at position 0). Masked and causal
/// scoring therefore read the same rows. No hidden-state access.
class TableBackend : public ModelBackend {
 public:
  /// `log_probs[prev][next]`, vocab.size() x vocab.size(). Rows are normalized
  /// once here and returned verbatim afterwards.
  TableBackend(Vocabulary vocab, ModelKind kind, std::vector<std::vector<double>> log_probs,
               std::string model_id = "mock-table");

  /// Rows drawn from a Dirichlet-like spread keyed by `seed`.
  static std::shared_ptr<TableBackend> random(Vocabulary vocab, ModelKind kind,
                                              std::uint64_t seed,
                                              std::string model_id = "mock-table");
  /// Uniform rows except the rows following the given words.
  static std::shared_ptr<TableBackend> uniform_except(
      Vocabulary vocab, ModelKind kind, const std::map<std::string, std::vector<double>>& rows,
      std::string model_id = "mock-table");

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  const std::vector<double>& row(TokenId previous) const;
  double log_prob(TokenId previous, TokenId next) const;

 protected:
  HeadOutput masked_head(std::span<const TokenId> tokens, std::size_t position) const override;
  HeadOutput causal_head(std::span<const TokenId> prefix) const override;

 private:
  WordTokenizer tokenizer_;
  std::vector<std::vector<double>> table_;
};

/// A term whose embedding carries the bias direction. Terms of one tuple share
/// `group`, so their embeddings differ only along the direction.
struct AttributeTerm {
  std::string word;
  double weight = 0.0;
  std::string group;
};

struct LinearBiasConfig {
  std::string model_id = "mock-linear-bias";
  ModelKind kind = ModelKind::masked;
  std::size_t hidden_dim = 16;
  std::uint64_t seed = 7;
  /// Unit bias direction b. Empty means a hash-seeded direction.
  Eigen::VectorXd direction;
  std::vector<AttributeTerm> attributes;
  /// Multiplies every attribute weight.
  double strength = 1.0;
  double head_scale = 1.0;
  double bias_gain = 1.0;
};

/// Linear mock with an analytically known bias.
///
///   context state   h = c0 + strength * sum_{t in context} weight(t) * b
///   token state     e_t = c_t + strength * weight(t) * b
///   head            logit_v = head_scale * <w_v, h> + bias_gain * g_v * <b, h>
///
/// c0, c_t and w_v are hash-seeded and orthogonal to b; g_v is a hash-seeded
/// scalar in [-1, 1). Only attribute terms move h along b, so two sentences
/// differing only in attribute terms score differently only through b, and
/// removing b from h makes them score identically.
class LinearBiasBackend : public ModelBackend, public HiddenStateAccess {
 public:
  LinearBiasBackend(Vocabulary vocab, LinearBiasConfig config);

  const Tokenizer& tokenizer() const override { return tokenizer_; }
  const HiddenStateAccess* hidden_access() const override { return this; }

  Eigen::VectorXd masked_hidden(std::span<const TokenId> tokens,
                                std::size_t position) const override;
  Eigen::VectorXd causal_hidden(std::span<const TokenId> prefix) const override;
  std::vector<Eigen::VectorXd> token_hidden(std::span<const TokenId> tokens) const override;
  HeadOutput lm_head(const Eigen::VectorXd& hidden) const override;

  const LinearBiasConfig& config() const { return config_; }
  const Eigen::VectorXd& direction() const { return direction_; }
  const Eigen::VectorXd& context_base() const { return context_base_; }
  const Eigen::MatrixXd& head_rows() const { return head_rows_; }
  const Eigen::VectorXd& bias_coefficients() const { return bias_coeff_; }
  double attribute_weight(TokenId id) const;

  /// Same backend with the attribute strength replaced.
  std::shared_ptr<LinearBiasBackend> with_strength(double strength, std::string model_id) const;

 private:
  Eigen::VectorXd context_state(std::span<const TokenId> tokens, std::size_t skip) const;

  WordTokenizer tokenizer_;
  LinearBiasConfig config_;
  Eigen::VectorXd direction_;
  Eigen::VectorXd context_base_;
  Eigen::MatrixXd token_base_;
  Eigen::MatrixXd head_rows_;
  Eigen::VectorXd bias_coeff_;
  std::vector<double> weights_;
};

/// Removes the component of `v` along unit vector `b`.
Eigen::VectorXd orthogonal_to(const Eigen::VectorXd& v, const Eigen::VectorXd& b);
Eigen::VectorXd hashed_eigen(std::uint64_t seed, std::string_view key, std::size_t dim);

}  // namespace biaslens
