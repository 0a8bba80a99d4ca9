#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cherry/dataset.hpp"

namespace cherry {

// Reserved vocabulary entries.  <bos> pads the left context; <unk> is the
// target for out-of-vocabulary tokens at lookup time.
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kUnkToken = "<unk>";

// Per-token log probabilities for one continuation.
struct TokenLogProbs {
  std::vector<std::string> tokens;  // surface tokens of the continuation
  std::vector<double> logprobs;     // natural log, aligned with tokens

  double sum() const;
  std::size_t size() const { return tokens.size(); }
};

// Anything that can assign token-level log probabilities to a continuation
// given a context.  Implementations must be deterministic for a fixed
// fingerprint: the fingerprint doubles as the cache key for scored records.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual const std::string& fingerprint() const = 0;
  virtual TokenLogProbs score_continuation(std::string_view context,
                                           std::string_view continuation) const = 0;
};

// Add-k smoothed n-gram language model over whitespace tokens.
//
// Training tokenizes question and answer, concatenates them, left-pads with
// order-1 <bos> markers and counts (context, token) transitions in a single
// pass.  The vocabulary is frozen after fit(); unseen tokens map to <unk>
// only when probabilities are looked up.  An untrained model (empty counts)
// is the maximally uniform scorer: every token costs log(V).
class NGramScorer final : public Scorer {
 public:
  static constexpr int kDefaultOrder = 3;
  static constexpr double kDefaultSmoothing = 0.1;

  static NGramScorer fit(const std::vector<RenderedPair>& corpus,
                         int order = kDefaultOrder,
                         double smoothing = kDefaultSmoothing);

  // No counts, reserved-only vocabulary ({<bos>, <unk>}).
  static NGramScorer untrained(int order = kDefaultOrder,
                               double smoothing = kDefaultSmoothing);

  // No counts, but a caller-chosen vocabulary (plus reserved entries).
  // Useful for pinning the uniform distribution in tests.
  static NGramScorer with_vocab(const std::vector<std::string>& vocab,
                                int order = kDefaultOrder,
                                double smoothing = kDefaultSmoothing);

  static NGramScorer load_snapshot(const std::filesystem::path& path);
  void save_snapshot(const std::filesystem::path& path) const;

  const std::string& fingerprint() const override { return fingerprint_; }
  TokenLogProbs score_continuation(std::string_view context,
                                   std::string_view continuation) const override;

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  std::size_t vocab_size() const { return vocab_.size(); }
  bool in_vocab(const std::string& token) const { return vocab_.count(token) != 0; }

  // Smoothed P(token | context window).  Uses the last order-1 context
  // entries (left-padded with <bos> when shorter) and maps out-of-vocabulary
  // tokens to <unk>.  Exposed so tests can probe single transitions.
  double transition_prob(const std::vector<std::string>& context,
                         const std::string& token) const;

 private:
  NGramScorer(int order, double smoothing);
  void ingest(const std::vector<std::string>& sequence);
  void rebuild_fingerprint();
  std::string mapped(const std::string& token) const;

  int order_;
  double smoothing_;
  std::set<std::string> vocab_;
  // context key -> token -> count.  Context keys join order-1 tokens with a
  // single space; tokens never contain whitespace so the key is unambiguous.
  std::map<std::string, std::map<std::string, std::uint64_t>> transitions_;
  std::map<std::string, std::uint64_t> context_totals_;
  std::string fingerprint_;
};

// Fixed-width embedding of an instruction (or any text).
struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual const std::string& fingerprint() const = 0;
  virtual std::size_t dim() const = 0;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
};

// Deterministic hashed bag-of-words embedder: each token increments the
// bucket FNV-1a64(token) mod dim, then the vector is L2-normalized.  Purely
// lexical, but stable across platforms and cheap enough for large corpora.
class HashedBagEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  explicit HashedBagEmbedder(std::size_t dim = kDefaultDim);

  const std::string& fingerprint() const override { return fingerprint_; }
  std::size_t dim() const override { return dim_; }

  // Throws a data error if the text has no tokens (the zero vector has no
  // L2 normalization).
  EmbeddingVector embed(std::string_view text) const override;

  static std::size_t bucket(std::string_view token, std::size_t dim);

 private:
  std::size_t dim_;
  std::string fingerprint_;
};

}  // namespace cherry
