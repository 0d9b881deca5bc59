#include "biaslens/http_backend.hpp"

#include <chrono>

#include "biaslens/errors.hpp"
#include "httplib.h"

namespace biaslens {

using nlohmann::json;

namespace {

json request(const std::string& endpoint, const RemoteOptions& options, const std::string& path,
             const json* body) {
  int last_status = -1;
  std::string last_error;
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    httplib::Client client(endpoint);
    client.set_connection_timeout(options.timeout_seconds, 0);
    client.set_read_timeout(options.timeout_seconds, 0);
    auto res = body ? client.Post(path, body->dump(), "application/json") : client.Get(path);
    if (!res) {
      last_error = httplib::to_string(res.error());
      last_status = -1;
    } else if (res->status >= 500) {
      last_status = res->status;
      last_error = res->body;
    } else if (res->status != 200) {
      throw BackendError(endpoint + path + " answered " + std::to_string(res->status) + ": " +
                             res->body,
                         attempt, res->status, false);
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw BackendError(endpoint + path + " returned invalid JSON: " + e.what(), attempt,
                           res->status, false);
      }
    }
    if (attempt < options.max_attempts) {
      std::this_thread::sleep_for(std::chrono::milliseconds(50 * attempt));
    }
  }
  throw BackendError(endpoint + path + " failed after " + std::to_string(options.max_attempts) +
                         " attempts: " + last_error,
                     options.max_attempts, last_status, true);
}

}  // namespace

class RemoteBackend::RemoteTokenizer : public Tokenizer {
 public:
  RemoteTokenizer(const RemoteBackend& owner, std::string id, std::optional<TokenId> bos)
      : owner_(owner), id_(std::move(id)), bos_(bos) {}

  std::string id() const override { return id_; }
  std::optional<TokenId> bos() const override { return bos_; }

  Encoding encode(std::string_view text) const override {
    const auto out = owner_.post("/tokenize", json{{"text", text}});
    Encoding enc;
    try {
      enc.pieces = out.at("pieces").get<std::vector<std::string>>();
      enc.ids = out.at("ids").get<std::vector<TokenId>>();
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed /tokenize response: ") + e.what(), 1, 200, false);
    }
    if (enc.pieces.size() != enc.ids.size()) {
      throw BackendError("/tokenize returned pieces and ids of different length", 1, 200, false);
    }
    return enc;
  }

 private:
  const RemoteBackend& owner_;
  std::string id_;
  std::optional<TokenId> bos_;
};

BackendInfo RemoteBackend::parse_info(const json& raw) {
  try {
    BackendInfo info;
    info.model_id = raw.at("model_id").get<std::string>();
    info.kind = parse_model_kind(raw.at("kind").get<std::string>());
    info.vocab_size = raw.at("vocab_size").get<std::size_t>();
    info.hidden_dim = raw.value("hidden_dim", std::size_t{0});
    info.supports_concurrent = raw.value("supports_concurrent", false);
    return info;
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /info response: ") + e.what(), 1, 200, false);
  }
}

RemoteBackend::RemoteBackend(std::string endpoint, RemoteOptions options)
    : RemoteBackend(endpoint, options, request(endpoint, options, "/info", nullptr)) {}

RemoteBackend::RemoteBackend(std::string endpoint, RemoteOptions options, const json& raw)
    : ModelBackend(parse_info(raw)), endpoint_(std::move(endpoint)), options_(options) {
  std::optional<TokenId> bos;
  if (raw.contains("bos_id") && !raw["bos_id"].is_null()) bos = raw["bos_id"].get<TokenId>();
  tokenizer_ = std::make_unique<RemoteTokenizer>(
      *this, raw.value("tokenizer_id", "remote:" + model_id()), bos);
}

RemoteBackend::~RemoteBackend() = default;

const Tokenizer& RemoteBackend::tokenizer() const { return *tokenizer_; }

json RemoteBackend::post(const std::string& path, const json& body) const {
  return request(endpoint_, options_, path, &body);
}

HeadOutput RemoteBackend::masked_head(std::span<const TokenId> tokens,
                                      std::size_t position) const {
  const auto out = post("/logprobs", json{{"tokens", std::vector<TokenId>(tokens.begin(), tokens.end())},
                                          {"position", position},
                                          {"kind", "masked"}});
  try {
    return {out.at("log_probs").get<std::vector<double>>(), true};
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /logprobs response: ") + e.what(), 1, 200, false);
  }
}

HeadOutput RemoteBackend::causal_head(std::span<const TokenId> prefix) const {
  const auto out = post("/logprobs", json{{"tokens", std::vector<TokenId>(prefix.begin(), prefix.end())},
                                          {"position", prefix.size()},
                                          {"kind", "causal"},
                                          {"raw", true}});
  try {
    if (out.contains("scores")) return {out.at("scores").get<std::vector<double>>(), false};
    return {out.at("log_probs").get<std::vector<double>>(), true};
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /logprobs response: ") + e.what(), 1, 200, false);
  }
}

Eigen::VectorXd RemoteBackend::encode(std::string_view text) const {
  const auto out = post("/encode", json{{"text", text}});
  std::vector<double> v;
  try {
    v = out.at("vector").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed /encode response: ") + e.what(), 1, 200, false);
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// --- server ------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, const json& body) {
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    fail(res, 400, e.what());
  } catch (const CapabilityError& e) {
    fail(res, 501, e.what());
  } catch (const json::exception& e) {
    fail(res, 400, e.what());
  } catch (const std::exception& e) {
    fail(res, 500, e.what());
  }
}

}  // namespace

BackendServer::BackendServer(BackendPtr backend, std::string host, int port)
    : backend_(std::move(backend)), host_(std::move(host)), server_(std::make_unique<httplib::Server>()) {
  auto& srv = *server_;
  const auto b = backend_;

  srv.Get("/info", [b](const httplib::Request&, httplib::Response& res) {
    const auto& info = b->info();
    json out{{"model_id", info.model_id},
             {"kind", to_string(info.kind)},
             {"vocab_size", info.vocab_size},
             {"hidden_dim", info.hidden_dim},
             {"supports_concurrent", info.supports_concurrent},
             {"tokenizer_id", b->tokenizer().id()}};
    if (const auto bos = b->tokenizer().bos()) out["bos_id"] = *bos;
    reply(res, out);
  });

  srv.Post("/tokenize", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto enc = b->tokenizer().encode(json::parse(req.body).at("text").get<std::string>());
      reply(res, json{{"pieces", enc.pieces}, {"ids", enc.ids}});
    });
  });

  srv.Post("/logprobs", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto tokens = body.at("tokens").get<std::vector<TokenId>>();
      const auto position = body.at("position").get<std::size_t>();
      const auto kind = parse_model_kind(body.at("kind").get<std::string>());
      if (kind != b->kind()) throw UsageError("backend is " + to_string(b->kind()));
      if (kind == ModelKind::masked) {
        reply(res, json{{"log_probs", b->masked_logprobs(tokens, position).log_probs}});
        return;
      }
      if (position != tokens.size()) throw UsageError("causal position must equal prefix length");
      if (body.value("raw", false)) {
        reply(res, json{{"scores", b->causal_raw_scores(tokens)}});
      } else {
        reply(res, json{{"log_probs", b->causal_logprobs(tokens).log_probs}});
      }
    });
  });

  srv.Post("/encode", [b](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto h = b->encode_sentence(json::parse(req.body).at("text").get<std::string>());
      reply(res, json{{"vector", std::vector<double>(h.vector.data(),
                                                     h.vector.data() + h.vector.size())}});
    });
  });

  port_ = port == 0 ? srv.bind_to_any_port(host_) : (srv.bind_to_port(host_, port) ? port : -1);
  if (port_ <= 0) throw BackendError("cannot bind " + host_, 1, -1, false);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

BackendServer::~BackendServer() { stop(); }

std::string BackendServer::endpoint() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

void BackendServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace biaslens
