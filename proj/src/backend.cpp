#include "biaslens/backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "biaslens/errors.hpp"

namespace biaslens {

std::string to_string(ModelKind kind) { return kind == ModelKind::masked ? "masked" : "causal"; }

ModelKind parse_model_kind(std::string_view name) {
  if (name == "masked") return ModelKind::masked;
  if (name == "causal") return ModelKind::causal;
  throw UsageError("unknown model kind '" + std::string(name) + "'");
}

double logsumexp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double sum = 0.0;
  for (const double v : x) sum += std::exp(v - m);
  return m + std::log(sum);
}

std::vector<double> log_softmax(std::span<const double> x) {
  const double lse = logsumexp(x);
  std::vector<double> out(x.begin(), x.end());
  for (auto& v : out) v -= lse;
  return out;
}

ModelBackend::ModelBackend(BackendInfo info) : info_(std::move(info)) {
  if (info_.vocab_size < 2) throw UsageError("backend vocabulary must have at least 2 entries");
}

PositionDistribution ModelBackend::normalize(HeadOutput out, std::size_t position) const {
  if (out.scores.size() != info_.vocab_size) {
    throw BackendError(info_.model_id + " returned " + std::to_string(out.scores.size()) +
                           " scores for a vocabulary of " + std::to_string(info_.vocab_size),
                       1, -1, false);
  }
  PositionDistribution d;
  d.position = position;
  d.log_probs = out.normalized ? std::move(out.scores) : log_softmax(out.scores);
  const double lse = logsumexp(d.log_probs);
  if (!(std::abs(lse) <= 1e-4)) {
    throw BackendError(info_.model_id + " returned an unnormalized distribution (logsumexp " +
                           std::to_string(lse) + ")",
                       1, -1, false);
  }
  return d;
}

PositionDistribution ModelBackend::masked_logprobs(std::span<const TokenId> tokens,
                                                   std::size_t mask_position) const {
  if (kind() != ModelKind::masked) {
    throw UsageError(info_.model_id + " is not a masked language model");
  }
  if (mask_position >= tokens.size()) {
    throw UsageError("mask position " + std::to_string(mask_position) + " outside sequence of " +
                     std::to_string(tokens.size()));
  }
  return normalize(masked_head(tokens, mask_position), mask_position);
}

PositionDistribution ModelBackend::causal_logprobs(std::span<const TokenId> prefix) const {
  if (kind() != ModelKind::causal) {
    throw UsageError(info_.model_id + " is not a causal language model");
  }
  if (prefix.empty()) throw UsageError("causal scoring needs a non-empty prefix");
  return normalize(causal_head(prefix), prefix.size());
}

std::vector<double> ModelBackend::causal_raw_scores(std::span<const TokenId> prefix) const {
  if (kind() != ModelKind::causal) {
    throw UsageError(info_.model_id + " is not a causal language model");
  }
  if (prefix.empty()) throw UsageError("causal scoring needs a non-empty prefix");
  auto out = causal_head(prefix);
  if (out.scores.size() != info_.vocab_size) {
    throw BackendError(info_.model_id + " returned a score vector of the wrong size", 1, -1,
                       false);
  }
  return std::move(out.scores);
}

HiddenState ModelBackend::encode_sentence(std::string_view text) const {
  if (text.empty()) throw UsageError("cannot encode empty text");
  HiddenState h{encode(text), "final"};
  if (static_cast<std::size_t>(h.vector.size()) != info_.hidden_dim) {
    throw BackendError(info_.model_id + " returned a hidden state of the wrong size", 1, -1,
                       false);
  }
  if (!h.vector.allFinite()) {
    throw BackendError(info_.model_id + " returned a non-finite hidden state", 1, -1, false);
  }
  return h;
}

HeadOutput ModelBackend::masked_head(std::span<const TokenId> tokens,
                                     std::size_t position) const {
  const auto* access = hidden_access();
  if (!access) throw CapabilityError(info_.model_id + " has no masked scoring path");
  return access->lm_head(access->masked_hidden(tokens, position));
}

HeadOutput ModelBackend::causal_head(std::span<const TokenId> prefix) const {
  const auto* access = hidden_access();
  if (!access) throw CapabilityError(info_.model_id + " has no causal scoring path");
  return access->lm_head(access->causal_hidden(prefix));
}

Eigen::VectorXd ModelBackend::encode(std::string_view text) const {
  const auto* access = hidden_access();
  if (!access) {
    throw CapabilityError(info_.model_id + " does not expose hidden states for encoding");
  }
  const auto enc = tokenizer().encode(text);
  if (enc.ids.empty()) throw UsageError("text has no tokens");
  const auto states = access->token_hidden(enc.ids);
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(info_.hidden_dim));
  for (const auto& s : states) mean += s;
  return mean / static_cast<double>(states.size());
}

}  // namespace biaslens
