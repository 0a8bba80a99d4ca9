#pragma once

#include <string>

#include "cherry/scorer.hpp"

namespace cherry {

// Environment variable holding the bearer token for remote backends.
inline constexpr const char* kApiKeyEnvVar = "CHERRY_API_KEY";

struct RemoteConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8089"
  std::string model;
  int timeout_seconds = 30;
  int max_retries = 3;  // additional attempts after the first
};

// Thin JSON-over-HTTP client.  Both endpoints are simple POSTs:
//   /v1/score  {context, continuation, model} -> {tokens: [...], logprobs: [...]}
//   /v1/embed  {text, model}                  -> {vector: [...]}
// The Authorization header is taken from $CHERRY_API_KEY when set.
// Transport failures and 5xx responses are retried up to max_retries with
// the attempt count reported in the final error; other non-200 statuses
// fail immediately.
class RemoteBackend {
 public:
  explicit RemoteBackend(RemoteConfig config);

  const RemoteConfig& config() const { return config_; }

  std::string post_json(const std::string& route, const std::string& body) const;

 private:
  RemoteConfig config_;
  std::string api_key_;
};

class RemoteScorer final : public Scorer {
 public:
  explicit RemoteScorer(RemoteConfig config);

  const std::string& fingerprint() const override { return fingerprint_; }
  TokenLogProbs score_continuation(std::string_view context,
                                   std::string_view continuation) const override;

 private:
  RemoteBackend backend_;
  std::string fingerprint_;
};

class RemoteEmbedder final : public Embedder {
 public:
  RemoteEmbedder(RemoteConfig config, std::size_t dim);

  const std::string& fingerprint() const override { return fingerprint_; }
  std::size_t dim() const override { return dim_; }

  // Validates shape and finiteness, then L2-normalizes the reply.
  EmbeddingVector embed(std::string_view text) const override;

 private:
  RemoteBackend backend_;
  std::size_t dim_;
  std::string fingerprint_;
};

}  // namespace cherry
