#include "cherry/remote.hpp"

#include <cmath>
#include <cstdlib>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"

namespace cherry {
namespace {

using nlohmann::json;

json parse_reply(const std::string& route, const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw_backend("backend returned malformed JSON from " + route + ": " +
                  e.what());
  }
}

}  // namespace

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    throw_config("remote backend requires a base URL");
  }
  if (config_.timeout_seconds < 1) {
    throw_config("remote timeout must be >= 1 second");
  }
  if (config_.max_retries < 0) {
    throw_config("remote max_retries must be >= 0");
  }
  if (const char* key = std::getenv(kApiKeyEnvVar)) {
    api_key_ = key;
  }
}

std::string RemoteBackend::post_json(const std::string& route,
                                     const std::string& body) const {
  std::string last_failure;
  const int attempts = config_.max_retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    client.set_write_timeout(config_.timeout_seconds, 0);

    httplib::Headers headers;
    if (!api_key_.empty()) {
      headers.emplace("Authorization", "Bearer " + api_key_);
    }

    auto res = client.Post(route, headers, body, "application/json");
    if (res && res->status == 200) {
      return res->body;
    }
    if (res && res->status >= 400 && res->status < 500 &&
        res->status != 408 && res->status != 429) {
      // Client-side mistakes won't improve on retry.
      throw_backend("backend rejected " + route + " with HTTP " +
                    std::to_string(res->status) + " on attempt " +
                    std::to_string(attempt) + "/" + std::to_string(attempts));
    }
    if (res) {
      last_failure = "HTTP " + std::to_string(res->status);
    } else {
      last_failure = "transport error (" + httplib::to_string(res.error()) + ")";
    }
  }
  throw_backend("backend " + config_.base_url + route + " failed after " +
                std::to_string(attempts) + " attempt(s): " + last_failure);
}

RemoteScorer::RemoteScorer(RemoteConfig config) : backend_(std::move(config)) {
  fingerprint_ = "remote-score:v1:" + backend_.config().base_url + ":" +
                 backend_.config().model;
}

TokenLogProbs RemoteScorer::score_continuation(
    std::string_view context, std::string_view continuation) const {
  nlohmann::json body;
  body["context"] = std::string(context);
  body["continuation"] = std::string(continuation);
  body["model"] = backend_.config().model;

  nlohmann::json reply =
      parse_reply("/v1/score", backend_.post_json("/v1/score", body.dump()));
  if (!reply.is_object() || !reply.contains("tokens") ||
      !reply.contains("logprobs") || !reply["tokens"].is_array() ||
      !reply["logprobs"].is_array()) {
    throw_backend("score reply is missing tokens/logprobs arrays");
  }

  TokenLogProbs out;
  for (const auto& tok : reply["tokens"]) {
    if (!tok.is_string()) throw_backend("score reply has a non-string token");
    out.tokens.push_back(tok.get<std::string>());
  }
  for (const auto& lp : reply["logprobs"]) {
    if (!lp.is_number()) throw_backend("score reply has a non-numeric logprob");
    double v = lp.get<double>();
    if (!std::isfinite(v) || v > 0.0) {
      throw_backend("score reply has an invalid log probability (" +
                    lp.dump() + ")");
    }
    out.logprobs.push_back(v);
  }
  if (out.tokens.empty() || out.tokens.size() != out.logprobs.size()) {
    throw_backend("score reply token/logprob lengths are inconsistent");
  }
  return out;
}

RemoteEmbedder::RemoteEmbedder(RemoteConfig config, std::size_t dim)
    : backend_(std::move(config)), dim_(dim) {
  if (dim_ == 0) throw_config("embedding dimension must be >= 1");
  fingerprint_ = "remote-embed:v1:" + backend_.config().base_url + ":" +
                 backend_.config().model + ":d=" + std::to_string(dim_);
}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
  nlohmann::json body;
  body["text"] = std::string(text);
  body["model"] = backend_.config().model;

  nlohmann::json reply =
      parse_reply("/v1/embed", backend_.post_json("/v1/embed", body.dump()));
  if (!reply.is_object() || !reply.contains("vector") ||
      !reply["vector"].is_array()) {
    throw_backend("embed reply is missing the vector array");
  }
  EmbeddingVector out;
  for (const auto& v : reply["vector"]) {
    if (!v.is_number()) throw_backend("embed reply has a non-numeric entry");
    out.values.push_back(v.get<double>());
  }
  if (out.values.size() != dim_) {
    throw_backend("embed reply has dimension " +
                  std::to_string(out.values.size()) + ", expected " +
                  std::to_string(dim_));
  }
  double sq = 0.0;
  for (double v : out.values) {
    if (!std::isfinite(v)) throw_backend("embed reply has a non-finite entry");
    sq += v * v;
  }
  if (sq <= 0.0) throw_backend("embed reply is the zero vector");
  double norm = std::sqrt(sq);
  for (double& v : out.values) v /= norm;
  return out;
}

}  // namespace cherry
