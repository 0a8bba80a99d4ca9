#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/remote.hpp"

using namespace cherry;
using nlohmann::json;

namespace {

// Minimal in-process HTTP stub.  Each test installs handlers, then talks to
// it over loopback exactly as it would to a real backend.
class StubServer {
 public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }

  httplib::Server& raw() { return server_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RemoteConfig config_for(const StubServer& server, int retries = 3) {
  RemoteConfig c;
  c.base_url = server.base_url();
  c.model = "test-model";
  c.timeout_seconds = 5;
  c.max_retries = retries;
  return c;
}

}  // namespace

TEST_CASE("remote scorer round-trips tokens and logprobs") {
  StubServer server;
  json seen_request;
  std::string seen_auth;
  server.raw().Post("/v1/score", [&](const httplib::Request& req,
                                     httplib::Response& res) {
    seen_request = json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    res.set_content(
        json{{"tokens", {"the", "sum", "is", "7"}},
             {"logprobs", {-0.5, -1.25, -0.125, -2.0}}}
            .dump(),
        "application/json");
  });

  ::setenv(kApiKeyEnvVar, "sk-test-123", 1);
  RemoteScorer scorer(config_for(server));
  TokenLogProbs got = scorer.score_continuation("add 3 and 4", "the sum is 7");
  ::unsetenv(kApiKeyEnvVar);

  REQUIRE(got.size() == 4);
  CHECK(got.tokens[1] == "sum");
  CHECK(got.logprobs[3] == -2.0);
  CHECK(got.sum() == doctest::Approx(-3.875));
  CHECK(seen_request["context"] == "add 3 and 4");
  CHECK(seen_request["continuation"] == "the sum is 7");
  CHECK(seen_request["model"] == "test-model");
  CHECK(seen_auth == "Bearer sk-test-123");
}

TEST_CASE("missing api key sends no Authorization header") {
  StubServer server;
  std::string seen_auth = "sentinel";
  server.raw().Post("/v1/score", [&](const httplib::Request& req,
                                     httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    res.set_content(json{{"tokens", {"x"}}, {"logprobs", {-1.0}}}.dump(),
                    "application/json");
  });
  ::unsetenv(kApiKeyEnvVar);
  RemoteScorer scorer(config_for(server));
  scorer.score_continuation("q", "x");
  CHECK(seen_auth.empty());
}

TEST_CASE("5xx responses are retried until success") {
  StubServer server;
  std::atomic<int> hits{0};
  server.raw().Post("/v1/score", [&](const httplib::Request&,
                                     httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 503;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(json{{"tokens", {"x"}}, {"logprobs", {-1.0}}}.dump(),
                    "application/json");
  });
  RemoteScorer scorer(config_for(server, /*retries=*/3));
  TokenLogProbs got = scorer.score_continuation("q", "x");
  CHECK(got.size() == 1);
  CHECK(hits == 3);
}

TEST_CASE("retries exhausted surfaces attempt count") {
  StubServer server;
  std::atomic<int> hits{0};
  server.raw().Post("/v1/score", [&](const httplib::Request&,
                                     httplib::Response& res) {
    ++hits;
    res.status = 500;
  });
  RemoteScorer scorer(config_for(server, /*retries=*/2));
  CHECK_THROWS_WITH_AS(scorer.score_continuation("q", "x"),
                       doctest::Contains("3 attempt"), Error);
  CHECK(hits == 3);  // initial try + 2 retries
}

TEST_CASE("client errors fail fast without retry") {
  StubServer server;
  std::atomic<int> hits{0};
  server.raw().Post("/v1/score", [&](const httplib::Request&,
                                     httplib::Response& res) {
    ++hits;
    res.status = 403;
  });
  RemoteScorer scorer(config_for(server, /*retries=*/3));
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
  CHECK(hits == 1);
}

TEST_CASE("throttling statuses are retried") {
  StubServer server;
  std::atomic<int> hits{0};
  server.raw().Post("/v1/score", [&](const httplib::Request&,
                                     httplib::Response& res) {
    if (++hits == 1) {
      res.status = 429;
      return;
    }
    res.set_content(json{{"tokens", {"x"}}, {"logprobs", {-1.0}}}.dump(),
                    "application/json");
  });
  RemoteScorer scorer(config_for(server));
  scorer.score_continuation("q", "x");
  CHECK(hits == 2);
}

TEST_CASE("malformed scorer replies are rejected") {
  StubServer server;
  std::string payload;
  server.raw().Post("/v1/score", [&](const httplib::Request&,
                                     httplib::Response& res) {
    res.set_content(payload, "application/json");
  });
  RemoteScorer scorer(config_for(server, /*retries=*/0));

  payload = "not json";
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
  payload = json{{"tokens", {"a", "b"}}, {"logprobs", {-1.0}}}.dump();
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
  payload = json{{"tokens", json::array()}, {"logprobs", json::array()}}.dump();
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
  payload = json{{"tokens", {"a"}}, {"logprobs", {0.5}}}.dump();  // > 0
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
  payload = json{{"tokens", {"a"}}, {"logprobs", {"oops"}}}.dump();
  CHECK_THROWS_AS(scorer.score_continuation("q", "x"), Error);
}

TEST_CASE("remote embedder validates and normalizes") {
  StubServer server;
  json reply = {{"vector", {3.0, 0.0, 4.0, 0.0}}};
  std::vector<std::string> seen_texts;
  server.raw().Post("/v1/embed", [&](const httplib::Request& req,
                                     httplib::Response& res) {
    json body = json::parse(req.body);
    seen_texts.push_back(body.value("text", ""));
    res.set_content(reply.dump(), "application/json");
  });

  RemoteEmbedder embedder(config_for(server), 4);
  EmbeddingVector v = embedder.embed("some instruction");
  REQUIRE(seen_texts.size() == 1);
  CHECK(seen_texts[0] == "some instruction");
  REQUIRE(v.dim() == 4);
  CHECK(v.values[0] == doctest::Approx(0.6));
  CHECK(v.values[2] == doctest::Approx(0.8));

  reply = {{"vector", {1.0, 2.0}}};  // wrong dimension
  CHECK_THROWS_AS(embedder.embed("text"), Error);
  reply = {{"vector", {0.0, 0.0, 0.0, 0.0}}};  // zero norm
  CHECK_THROWS_AS(embedder.embed("text"), Error);
}

TEST_CASE("remote fingerprints identify backend and model") {
  StubServer server;
  RemoteConfig c = config_for(server);
  RemoteScorer scorer(c);
  RemoteEmbedder embedder(c, 8);
  CHECK(scorer.fingerprint().find("test-model") != std::string::npos);
  CHECK(scorer.fingerprint() != embedder.fingerprint());
}

TEST_CASE("unreachable backend reports a backend error") {
  RemoteConfig c;
  c.base_url = "http://127.0.0.1:9";  // discard port; nothing listens
  c.model = "m";
  c.timeout_seconds = 1;
  c.max_retries = 1;
  RemoteScorer scorer(c);
  try {
    scorer.score_continuation("q", "x");
    FAIL("expected a backend error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::backend);
  }
}
