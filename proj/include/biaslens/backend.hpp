#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "biaslens/tokenizer.hpp"

namespace biaslens {

enum class ModelKind { masked, causal };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

struct BackendInfo {
  std::string model_id;
  ModelKind kind = ModelKind::masked;
  std::size_t vocab_size = 0;
  std::size_t hidden_dim = 0;
  bool supports_concurrent = false;
};

/// Log-probabilities over the vocabulary for one position.
struct PositionDistribution {
  std::size_t position = 0;
  std::vector<double> log_probs;
};

struct HiddenState {
  Eigen::VectorXd vector;
  std::string layer = "final";
};

/// LM-head output. Backends that already produce log-probabilities set
/// `normalized`; everything else is passed through log-softmax.
struct HeadOutput {
  std::vector<double> scores;
  bool normalized = false;
};

/// Optional capability: the final hidden state at the scored position and
/// the LM head that maps it to scores. Debiasing intercepts between the two.
class HiddenStateAccess {
 public:
  virtual ~HiddenStateAccess() = default;

  /// Final hidden state at `position` with that slot masked.
  virtual Eigen::VectorXd masked_hidden(std::span<const TokenId> tokens,
                                        std::size_t position) const = 0;
  /// Final hidden state used to predict the token after `prefix`.
  virtual Eigen::VectorXd causal_hidden(std::span<const TokenId> prefix) const = 0;
  /// Final hidden state of every token of an unmasked sequence.
  virtual std::vector<Eigen::VectorXd> token_hidden(std::span<const TokenId> tokens) const = 0;
  virtual HeadOutput lm_head(const Eigen::VectorXd& hidden) const = 0;
};

/// Model inference contract. Scoring only sees log-probabilities; the
/// public entry points validate preconditions and normalize head output.
class ModelBackend {
 public:
  explicit ModelBackend(BackendInfo info);
  virtual ~ModelBackend() = default;

  const BackendInfo& info() const { return info_; }
  ModelKind kind() const { return info_.kind; }
  const std::string& model_id() const { return info_.model_id; }

  virtual const Tokenizer& tokenizer() const = 0;
  /// nullptr when the backend cannot expose hidden states.
  virtual const HiddenStateAccess* hidden_access() const { return nullptr; }

  /// Requires kind() == masked and mask_position < tokens.size().
  PositionDistribution masked_logprobs(std::span<const TokenId> tokens,
                                       std::size_t mask_position) const;
  /// Requires kind() == causal and a non-empty prefix.
  PositionDistribution causal_logprobs(std::span<const TokenId> prefix) const;
  /// Pre-softmax LM-head scores after `prefix`, for raw-logit replication.
  std::vector<double> causal_raw_scores(std::span<const TokenId> prefix) const;
  /// Mean of the final hidden states of the sentence's tokens.
  HiddenState encode_sentence(std::string_view text) const;

 protected:
  /// Default implementations route through hidden_access().
  virtual HeadOutput masked_head(std::span<const TokenId> tokens, std::size_t position) const;
  virtual HeadOutput causal_head(std::span<const TokenId> prefix) const;
  virtual Eigen::VectorXd encode(std::string_view text) const;

  void set_info(BackendInfo info) { info_ = std::move(info); }

 private:
  PositionDistribution normalize(HeadOutput out, std::size_t position) const;

  BackendInfo info_;
};

using BackendPtr = std::shared_ptr<const ModelBackend>;

/// log(sum(exp(x))) computed stably.
double logsumexp(std::span<const double> x);
std::vector<double> log_softmax(std::span<const double> x);

}  // namespace biaslens
