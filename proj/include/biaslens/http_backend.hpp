#pragma once

#include <memory>
#include <string>
#include <thread>

#include "biaslens/backend.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace biaslens {

// Remote adapter protocol (JSON over HTTP):
//
//   GET  /info      -> {model_id, kind, vocab_size, hidden_dim, supports_concurrent,
//                       tokenizer_id, bos_id?}
//   POST /tokenize  {text}                    -> {pieces, ids}
//   POST /logprobs  {tokens, position, kind}  -> {log_probs}
//                   (optional "raw": true     -> {scores}, causal only)
//   POST /encode    {text}                    -> {vector}
//
// For causal models `tokens` is the prefix and `position` equals its length.

struct RemoteOptions {
  int max_attempts = 3;
  int timeout_seconds = 30;
};

class RemoteBackend : public ModelBackend {
 public:
  /// Connects and reads /info. Throws BackendError when unreachable.
  explicit RemoteBackend(std::string endpoint, RemoteOptions options = {});
  ~RemoteBackend() override;

  const Tokenizer& tokenizer() const override;
  const std::string& endpoint() const { return endpoint_; }

 protected:
  HeadOutput masked_head(std::span<const TokenId> tokens, std::size_t position) const override;
  HeadOutput causal_head(std::span<const TokenId> prefix) const override;
  Eigen::VectorXd encode(std::string_view text) const override;

 private:
  class RemoteTokenizer;

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;
  RemoteBackend(std::string endpoint, RemoteOptions options, const nlohmann::json& info);
  static BackendInfo parse_info(const nlohmann::json& raw);

  std::string endpoint_;
  RemoteOptions options_;
  std::unique_ptr<RemoteTokenizer> tokenizer_;
};

/// Serves any backend over the remote protocol on a background thread.
class BackendServer {
 public:
  /// Binds to host on an ephemeral port when `port` is 0.
  BackendServer(BackendPtr backend, std::string host = "127.0.0.1", int port = 0);
  ~BackendServer();
  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  int port() const { return port_; }
  std::string endpoint() const;
  void stop();

 private:
  BackendPtr backend_;
  std::string host_;
  int port_ = 0;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace biaslens
