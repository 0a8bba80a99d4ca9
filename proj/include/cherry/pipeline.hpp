#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cherry/ifd.hpp"
#include "cherry/remote.hpp"

namespace cherry {

struct PipelineConfig {
  std::filesystem::path input_path;
  std::filesystem::path output_path;
  std::filesystem::path cache_dir;
  std::string template_name = "alpaca";
  std::optional<std::filesystem::path> templates_path;  // extra templates

  std::string scorer_kind = "builtin";  // builtin | remote
  int ngram_order = 3;
  double smoothing_k = 0.1;
  std::size_t embed_dim = 256;

  int clusters_k = 100;
  int per_cluster_m = 10;
  // When set, overrides the pre-experience budget (clusters_k*per_cluster_m
  // by default); 0 skips the fit entirely and scores with the untrained
  // model.
  std::optional<std::size_t> pre_experience_size;
  std::string pre_experience_strategy = "diversity";  // diversity|random|difficulty

  double fraction = 0.10;  // selected share of the original dataset
  std::string strategy = "top_ifd";
  std::uint64_t seed = 0;
  int parallelism = 1;

  RemoteConfig remote;

  void validate() const;  // throws config errors
};

// Loads a JSON config object; unknown keys are rejected so typos surface.
PipelineConfig load_config(const std::filesystem::path& path);

// Serializes the effective config (the manifest embeds this snapshot).
nlohmann::ordered_json config_snapshot(const PipelineConfig& config);

struct PhaseTiming {
  std::string phase;
  double seconds = 0.0;
  bool reused = false;  // satisfied from cache_dir artifacts
};

struct RunManifest {
  nlohmann::ordered_json config;  // snapshot of the effective config
  std::size_t loaded = 0;
  std::size_t rejected = 0;
  std::size_t pre_experience = 0;
  std::size_t filtered = 0;  // records surviving the misalignment filter
  std::size_t selected = 0;
  bool shortfall = false;
  std::string theta0_fingerprint;
  std::string theta_fingerprint;
  std::string embedder_fingerprint;
  std::string tool_version;
  std::vector<PhaseTiming> timings;  // wall clock; lives in timings.json only
};

// Pipeline phases, in execution order.
enum class Phase {
  load,       // 0: read + validate the dataset
  embed,      // 1: embed every instruction
  preselect,  // 2: pick the pre-experience subset
  fit,        // 3: fit the pre-experienced scorer on it
  score,      // 4: score the full dataset (cache-backed)
  filter,     // 5: drop misaligned records
  select,     // 6: apply the selection strategy
  emit,       // 7: write the cherry dataset + manifest
};

// Runs phases up to and including `until`.
//  - reuse=false recomputes phase artifacts from scratch (the score cache is
//    still honored per score_dataset semantics)
//  - reuse=true loads any compatible artifact from cache_dir and refuses to
//    run if the cache stamp was written by an incompatible config
RunManifest execute_pipeline(const PipelineConfig& config, bool reuse,
                             Phase until = Phase::emit, bool verbose = false);

inline RunManifest run_pipeline(const PipelineConfig& config,
                                bool verbose = false) {
  return execute_pipeline(config, /*reuse=*/false, Phase::emit, verbose);
}

// Picks up an interrupted run: validates the cache stamp, reuses finished
// artifacts, recomputes the rest.  An empty cache_dir degrades to a fresh
// run; a stamp from an incompatible config is a hard config error.
inline RunManifest resume(const PipelineConfig& config, bool verbose = false) {
  return execute_pipeline(config, /*reuse=*/true, Phase::emit, verbose);
}

// Artifact names under cache_dir.
namespace artifact {
inline constexpr const char* kStamp = "cache_stamp.json";
inline constexpr const char* kEmbeddings = "embeddings.bin";
inline constexpr const char* kAssignment = "kmeans_assignment.json";
inline constexpr const char* kPreExperience = "pre_experience.json";
inline constexpr const char* kTheta = "theta.json";
inline constexpr const char* kScores = "scores.jsonl";
inline constexpr const char* kScoresTheta0 = "scores_theta0.jsonl";
inline constexpr const char* kSelectedIds = "selected_ids.json";
inline constexpr const char* kSelectionManifest = "selection_manifest.json";
inline constexpr const char* kManifest = "MANIFEST.json";
inline constexpr const char* kTimings = "timings.json";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kProjection = "projection.csv";
}  // namespace artifact

// Runs the pipeline up to scoring (reusing the cache), then writes
// report.json and projection.csv into cache_dir: score statistics, per-
// cluster density of the hardest/easiest `density_fraction`, and a 2-D
// projection of the embeddings.
void analyze_pipeline(const PipelineConfig& config, double density_fraction,
                      bool verbose = false);

}  // namespace cherry
