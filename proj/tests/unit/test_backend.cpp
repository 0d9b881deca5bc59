#include <cmath>

#include <gtest/gtest.h>

#include "biaslens/backend.hpp"
#include "biaslens/errors.hpp"
#include "biaslens/http_backend.hpp"
#include "biaslens/mock_backends.hpp"
#include "biaslens/text.hpp"

using namespace biaslens;

namespace {

Vocabulary toy_vocab() { return Vocabulary({"the", "cat", "sat", "down", "."}); }

std::vector<TokenId> ids(const Tokenizer& t, std::string_view s) { return t.encode(s).ids; }

}  // namespace

TEST(UniformBackend, MaskedIsUniform) {
  UniformBackend b(toy_vocab(), ModelKind::masked);
  const auto tokens = ids(b.tokenizer(), "the cat sat");
  const auto d = b.masked_logprobs(tokens, 1);
  ASSERT_EQ(d.log_probs.size(), b.info().vocab_size);
  const double expected = -std::log(static_cast<double>(b.info().vocab_size));
  for (const auto lp : d.log_probs) EXPECT_DOUBLE_EQ(lp, expected);
  EXPECT_NEAR(logsumexp(d.log_probs), 0.0, 1e-4);
}

TEST(UniformBackend, CausalIsUniformAndRejectsEmptyPrefix) {
  UniformBackend b(toy_vocab(), ModelKind::causal);
  const std::vector<TokenId> prefix{Vocabulary::kBos};
  const auto d = b.causal_logprobs(prefix);
  EXPECT_DOUBLE_EQ(d.log_probs[3], -std::log(static_cast<double>(b.info().vocab_size)));
  EXPECT_THROW(b.causal_logprobs(std::span<const TokenId>{}), UsageError);
}

TEST(UniformBackend, KindAndPositionPreconditions) {
  UniformBackend masked(toy_vocab(), ModelKind::masked);
  const auto tokens = ids(masked.tokenizer(), "the cat");
  EXPECT_THROW(masked.masked_logprobs(tokens, 2), UsageError);
  EXPECT_THROW(masked.causal_logprobs(tokens), UsageError);
}

TEST(UniformBackend, EncodeIsMeanOfFixtureVectors) {
  UniformBackend b(toy_vocab(), ModelKind::masked, 6, 3);
  const Eigen::VectorXd expected = (b.token_vector("the") + b.token_vector("cat")) / 2.0;
  const auto h = b.encode_sentence("the cat");
  EXPECT_EQ(h.vector, expected);
  EXPECT_EQ(b.encode_sentence("the cat").vector, h.vector);
  EXPECT_THROW(b.encode_sentence(""), UsageError);
}

TEST(UniformBackend, TokenVectorIsHashSeeded) {
  UniformBackend b(toy_vocab(), ModelKind::masked, 4, 9);
  const auto raw = text::hashed_vector(9, "cat", 4);
  const auto v = b.token_vector("cat");
  for (int i = 0; i < 4; ++i) EXPECT_EQ(v(i), raw[static_cast<std::size_t>(i)]);
}

TEST(TableBackend, ReturnsTableRows) {
  auto b = TableBackend::random(toy_vocab(), ModelKind::masked, 5);
  const auto tokens = ids(b->tokenizer(), "the cat sat");
  const auto d = b->masked_logprobs(tokens, 2);
  EXPECT_EQ(d.log_probs, b->row(tokens[1]));
  EXPECT_NEAR(logsumexp(d.log_probs), 0.0, 1e-12);
}

TEST(TableBackend, CausalPrefixesReadMatchingRows) {
  auto b = TableBackend::random(toy_vocab(), ModelKind::causal, 8);
  const auto t = ids(b->tokenizer(), "the cat");
  const std::vector<TokenId> one{t[0]};
  const std::vector<TokenId> two{t[0], t[1]};
  EXPECT_EQ(b->causal_logprobs(one).log_probs, b->row(t[0]));
  EXPECT_EQ(b->causal_logprobs(two).log_probs, b->row(t[1]));
}

TEST(TableBackend, HasNoHiddenStates) {
  auto b = TableBackend::random(toy_vocab(), ModelKind::masked, 1);
  EXPECT_EQ(b->hidden_access(), nullptr);
  EXPECT_THROW(b->encode_sentence("the cat"), CapabilityError);
}

TEST(LinearBiasBackend, HeadDependsOnDirectionOnlyThroughAttributes) {
  Vocabulary v({"he", "she", "is", "here"});
  LinearBiasConfig cfg;
  cfg.attributes = {{"he", 1.0, "p"}, {"she", -1.0, "p"}};
  LinearBiasBackend b(v, cfg);
  const auto he = b.tokenizer().encode("he is here").ids;
  const auto she = b.tokenizer().encode("she is here").ids;
  const Eigen::VectorXd diff = b.masked_hidden(he, 2) - b.masked_hidden(she, 2);
  // Only the attribute weights differ, so the difference is 2 * strength * b.
  EXPECT_NEAR((diff - 2.0 * b.direction()).norm(), 0.0, 1e-12);
  EXPECT_NEAR(b.context_base().dot(b.direction()), 0.0, 1e-12);
}

TEST(RemoteBackend, MatchesServedBackend) {
  auto local = std::make_shared<LinearBiasBackend>(
      Vocabulary({"he", "she", "is", "kind"}),
      LinearBiasConfig{.attributes = {{"he", 1.0, "p"}, {"she", -1.0, "p"}}});
  BackendServer server(local);
  RemoteBackend remote(server.endpoint());
  EXPECT_EQ(remote.info().vocab_size, local->info().vocab_size);
  EXPECT_EQ(remote.model_id(), local->model_id());
  const auto t = remote.tokenizer().encode("he is kind");
  EXPECT_EQ(t.ids, local->tokenizer().encode("he is kind").ids);
  const auto a = remote.masked_logprobs(t.ids, 1).log_probs;
  const auto b = local->masked_logprobs(t.ids, 1).log_probs;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_NEAR((remote.encode_sentence("she is kind").vector -
               local->encode_sentence("she is kind").vector).norm(), 0.0, 1e-12);
}

TEST(RemoteBackend, CausalRawScoresRoundTrip) {
  auto local = std::make_shared<LinearBiasBackend>(
      Vocabulary({"a", "b"}), LinearBiasConfig{.kind = ModelKind::causal});
  BackendServer server(local);
  RemoteBackend remote(server.endpoint());
  const std::vector<TokenId> prefix{Vocabulary::kBos, 3};
  const auto raw = remote.causal_raw_scores(prefix);
  const auto expected = local->causal_raw_scores(prefix);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(raw[i], expected[i], 1e-12);
}

TEST(RemoteBackend, UnreachableEndpointRaisesBackendError) {
  try {
    RemoteBackend remote("http://127.0.0.1:1", RemoteOptions{2, 1});
    FAIL() << "expected BackendError";
  } catch (const BackendError& e) {
    EXPECT_EQ(e.attempts(), 2);
    EXPECT_TRUE(e.retryable());
  }
}

TEST(RemoteBackend, ServerReportsMissingCapability) {
  auto local = TableBackend::random(Vocabulary({"a", "b"}), ModelKind::masked, 2);
  BackendServer server(local);
  RemoteBackend remote(server.endpoint());
  EXPECT_THROW(remote.encode_sentence("a b"), BackendError);
}
