#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cherry/dataset.hpp"
#include "cherry/diversity.hpp"
#include "cherry/scorer.hpp"

namespace cherry {

// Epsilon floor applied to the direct answer score when it appears in a
// denominator, so pathological near-zero perplexities cannot blow up the
// ratio.
inline constexpr double kDenominatorFloor = 1e-8;

// One scored sample.  `ca` conditions the answer on the rendered question;
// `da` scores the answer alone.  `ifd` is their ratio: how little the
// instruction helps the model predict its own answer.
struct ScoreRecord {
  std::string sample_id;
  double da = 0.0;
  double ca = 0.0;
  double ifd = 0.0;
  std::int64_t n_answer_tokens = 0;
  std::string scorer_fingerprint;
  bool da_floor_applied = false;
};

struct AnswerScore {
  double value = 0.0;            // mean negative log-likelihood, nats/token
  std::int64_t token_count = 0;
};

// Mean negative log-likelihood of the answer given the rendered question.
AnswerScore conditioned_answer_score(const Scorer& scorer,
                                     const RenderedPair& pair);

// Mean negative log-likelihood of the answer alone (empty context).
AnswerScore direct_answer_score(const Scorer& scorer,
                                const RenderedPair& pair);

struct IfdValue {
  double value = 0.0;
  bool floor_applied = false;
};

// ca / max(da, kDenominatorFloor), flagging when the floor engaged.
IfdValue ifd_ratio(double ca, double da);

ScoreRecord score_sample(const Scorer& scorer, const Sample& sample,
                         const PromptTemplate& tmpl);

struct ScoreOptions {
  int parallelism = 1;  // worker threads; output bytes are identical at any level
};

struct ScoreRunStats {
  std::size_t cache_hits = 0;
  std::size_t computed = 0;
  std::size_t stale_fingerprint = 0;  // cache entries ignored: other scorer
  std::size_t corrupt_lines = 0;      // cache lines skipped as unreadable
};

// Scores every sample, reusing any record already present in the JSONL cache
// whose fingerprint matches the scorer.  Newly computed records are appended
// to the cache in dataset order regardless of parallelism, so the cache file
// grows deterministically.  Returns records in dataset order.
std::vector<ScoreRecord> score_dataset(const Scorer& scorer,
                                       const std::vector<Sample>& samples,
                                       const PromptTemplate& tmpl,
                                       const std::filesystem::path& cache_path,
                                       const ScoreOptions& options = {},
                                       ScoreRunStats* stats = nullptr);

// Raw cache access (append-only JSONL, one record per line).
void append_score_cache(const std::filesystem::path& cache_path,
                        const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_score_cache(const std::filesystem::path& cache_path,
                                          std::size_t* corrupt_lines = nullptr);

struct FilterResult {
  std::vector<ScoreRecord> kept;     // ifd <= 1, dataset order
  std::vector<ScoreRecord> dropped;  // ifd > 1: question made the answer easier
};

// Drops samples whose ratio exceeds 1: for those, conditioning on the
// question made the answer *harder* to predict than no question at all,
// which signals question/answer mismatch rather than difficulty.
// Records with ifd == 1 are kept.
FilterResult filter_misaligned(const std::vector<ScoreRecord>& records);

enum class StrategyKind {
  top_ifd,   // highest ratio first (the cherry selection)
  low_ifd,   // lowest ratio first (adversarial baseline)
  high_ca,   // highest conditioned score first (difficulty without the ratio)
  random,    // seeded uniform baseline
  diversity, // cluster the candidates, walk clusters centre-out
};

struct SelectionStrategy {
  StrategyKind kind = StrategyKind::top_ifd;
  std::uint64_t seed = 0;  // random / diversity
  int clusters = 100;      // diversity

  std::string name() const;
  // Accepts "top_ifd", "low_ifd", "high_ca", "random", "diversity".
  static SelectionStrategy parse(const std::string& text);
};

struct SelectionResult {
  std::vector<std::string> ids;  // dataset order
  std::size_t target = 0;        // requested size
  bool shortfall = false;        // fewer candidates than the target
};

// Picks ceil(fraction * dataset_size) ids from `records` (already filtered
// for strategies that want filtering; `records` must be in dataset order).
// Ties are broken by dataset order, and the returned ids are sorted back
// into dataset order.  Diversity needs `embeddings` covering every record.
SelectionResult select(const std::vector<ScoreRecord>& records,
                       const SelectionStrategy& strategy, double fraction,
                       std::size_t dataset_size,
                       const EmbeddingSet* embeddings = nullptr);

// Same, but with an explicit target count.
SelectionResult select_count(const std::vector<ScoreRecord>& records,
                             const SelectionStrategy& strategy,
                             std::size_t target,
                             const EmbeddingSet* embeddings = nullptr);

}  // namespace cherry
