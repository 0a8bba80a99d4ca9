#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cherry/analysis.hpp"
#include "cherry/errors.hpp"
#include "cherry/pipeline.hpp"
#include "corpus.hpp"
#include "oracles.hpp"

using namespace cherry;
namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("cherry_pipeline_test_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Manifests from runs in different cache directories can only differ in the
// recorded config paths; everything else must match exactly.
nlohmann::ordered_json manifest_modulo_paths(const std::string& text) {
  auto doc = nlohmann::ordered_json::parse(text);
  REQUIRE(doc.contains("config"));
  doc["config"].erase("input_path");
  doc["config"].erase("output_path");
  doc["config"].erase("cache_dir");
  return doc;
}

// Small, fast settings used by most pipeline tests.
PipelineConfig small_config(const fs::path& dir, std::size_t n = 60) {
  testgen::write_corpus(dir / "corpus.json", n, 0xFEED);
  PipelineConfig c;
  c.input_path = dir / "corpus.json";
  c.cache_dir = dir / "cache";
  c.output_path = c.cache_dir / "cherry_dataset.json";
  c.ngram_order = 2;
  c.embed_dim = 32;
  c.clusters_k = 5;
  c.per_cluster_m = 2;
  c.fraction = 0.2;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("config file parsing honors every key and rejects unknowns") {
  fs::path dir = temp_dir();
  fs::path cfg_path = dir / "config.json";
  {
    std::ofstream out(cfg_path);
    out << R"({
      "input_path": "in.json",
      "output_path": "out.json",
      "cache_dir": "cache",
      "template_name": "alpaca",
      "scorer_kind": "remote",
      "ngram_order": 2,
      "smoothing_k": 0.5,
      "embed_dim": 64,
      "clusters_k": 10,
      "per_cluster_m": 3,
      "pre_experience_size_override": 25,
      "pre_experience_strategy": "random",
      "fraction": 0.15,
      "strategy": "low_ifd",
      "seed": 99,
      "parallelism": 4,
      "remote": {"base_url": "http://localhost:1", "model": "m1",
                 "timeout_seconds": 5, "max_retries": 2}
    })";
  }
  PipelineConfig c = load_config(cfg_path);
  CHECK(c.input_path == "in.json");
  CHECK(c.output_path == "out.json");
  CHECK(c.scorer_kind == "remote");
  CHECK(c.ngram_order == 2);
  CHECK(c.smoothing_k == 0.5);
  CHECK(c.embed_dim == 64);
  CHECK(c.clusters_k == 10);
  CHECK(c.per_cluster_m == 3);
  REQUIRE(c.pre_experience_size.has_value());
  CHECK(*c.pre_experience_size == 25);
  CHECK(c.pre_experience_strategy == "random");
  CHECK(c.fraction == 0.15);
  CHECK(c.strategy == "low_ifd");
  CHECK(c.seed == 99);
  CHECK(c.parallelism == 4);
  CHECK(c.remote.base_url == "http://localhost:1");
  CHECK(c.remote.model == "m1");
  CHECK(c.remote.max_retries == 2);

  std::ofstream(dir / "bad.json") << R"({"input_path": "x", "frcation": 0.1})";
  CHECK_THROWS_WITH_AS(load_config(dir / "bad.json"),
                       doctest::Contains("frcation"), Error);
  std::ofstream(dir / "bad2.json") << R"({"ngram_order": "three"})";
  CHECK_THROWS_AS(load_config(dir / "bad2.json"), Error);
  std::ofstream(dir / "bad3.json") << R"({"remote": {"uri": "x"}})";
  CHECK_THROWS_AS(load_config(dir / "bad3.json"), Error);
}

TEST_CASE("config validation enforces bounds") {
  fs::path dir = temp_dir();
  PipelineConfig c = small_config(dir);
  c.validate();  // baseline passes

  PipelineConfig bad = c;
  bad.fraction = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.fraction = 1.2;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.ngram_order = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.smoothing_k = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.clusters_k = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.parallelism = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.scorer_kind = "quantum";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.strategy = "best";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.pre_experience_strategy = "psychic";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.scorer_kind = "remote";  // remote needs a url
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.input_path.clear();
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("full pipeline run produces consistent artifacts") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);
  RunManifest manifest = run_pipeline(config);

  CHECK(manifest.loaded == 60);
  CHECK(manifest.rejected == 0);
  CHECK(manifest.pre_experience == 10);  // 5 clusters x 2
  CHECK(manifest.filtered <= manifest.loaded);
  CHECK(manifest.selected <= manifest.filtered);
  CHECK(manifest.selected == 12);  // ceil(0.2 * 60)
  CHECK_FALSE(manifest.shortfall);
  CHECK_FALSE(manifest.theta0_fingerprint.empty());
  CHECK_FALSE(manifest.theta_fingerprint.empty());
  CHECK(manifest.theta_fingerprint != manifest.theta0_fingerprint);
  CHECK(manifest.tool_version == "0.1.0");

  for (const char* name :
       {artifact::kStamp, artifact::kEmbeddings, artifact::kAssignment,
        artifact::kPreExperience, artifact::kTheta, artifact::kScores,
        artifact::kSelectedIds, artifact::kSelectionManifest,
        artifact::kManifest, artifact::kTimings}) {
    CHECK_MESSAGE(fs::exists(config.cache_dir / name), name);
  }

  // The emitted dataset holds exactly the selected ids, in dataset order.
  Dataset cherry_data = load_dataset(config.output_path);
  json selected = json::parse(slurp(config.cache_dir / artifact::kSelectedIds));
  REQUIRE(selected.is_array());
  REQUIRE(cherry_data.samples.size() == selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    CHECK(cherry_data.samples[i].id == selected[i].get<std::string>());
  }
  Dataset source = load_dataset(config.input_path);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < source.samples.size(); ++i) {
    position[source.samples[i].id] = i;
  }
  for (std::size_t i = 1; i < cherry_data.samples.size(); ++i) {
    CHECK(position.at(cherry_data.samples[i - 1].id) <
          position.at(cherry_data.samples[i].id));
  }

  // Selected records carry the highest surviving ratios: every selected ifd
  // is >= every unselected kept ifd (ties broken by dataset order).
  std::vector<ScoreRecord> records =
      read_score_cache(config.cache_dir / artifact::kScores);
  std::set<std::string> picked;
  for (const auto& id : selected) picked.insert(id.get<std::string>());
  double min_picked = 1e300;
  double max_unpicked = -1e300;
  for (const ScoreRecord& r : records) {
    if (r.ifd > 1.0) continue;  // filtered out
    if (picked.count(r.sample_id)) {
      min_picked = std::min(min_picked, r.ifd);
    } else {
      max_unpicked = std::max(max_unpicked, r.ifd);
    }
  }
  CHECK(min_picked >= max_unpicked);

  // The manifest embeds the config snapshot and counts, but no wall-clock
  // data; timings live in the sidecar.
  json m = json::parse(slurp(config.cache_dir / artifact::kManifest));
  CHECK(m["schema_version"] == 1);
  CHECK(m["counts"]["loaded"] == 60);
  CHECK(m["counts"]["selected"] == 12);
  CHECK(m["config"]["fraction"] == 0.2);
  CHECK_FALSE(m.contains("timings"));
  json t = json::parse(slurp(config.cache_dir / artifact::kTimings));
  CHECK(t["phases"].size() == 8);
}

TEST_CASE("identical seeds give byte-identical outputs") {
  fs::path dir = temp_dir();
  testgen::write_corpus(dir / "corpus.json", 80, 0xBEEF);

  auto run_into = [&](const fs::path& cache) {
    PipelineConfig c;
    c.input_path = dir / "corpus.json";
    c.cache_dir = cache;
    c.output_path = cache / "cherry_dataset.json";
    c.ngram_order = 2;
    c.embed_dim = 32;
    c.clusters_k = 4;
    c.per_cluster_m = 3;
    c.fraction = 0.15;
    c.seed = 21;
    run_pipeline(c);
    return std::make_pair(slurp(c.output_path),
                          slurp(cache / artifact::kManifest));
  };

  auto [data_a, manifest_a] = run_into(dir / "cache_a");
  auto [data_b, manifest_b] = run_into(dir / "cache_b");
  CHECK(data_a == data_b);
  CHECK(slurp(dir / "cache_a" / artifact::kScores) ==
        slurp(dir / "cache_b" / artifact::kScores));
  CHECK(manifest_modulo_paths(manifest_a) == manifest_modulo_paths(manifest_b));
}

TEST_CASE("parallel scoring does not change pipeline output") {
  fs::path dir = temp_dir();
  testgen::write_corpus(dir / "corpus.json", 50, 0xACE);
  auto run_with = [&](int parallelism, const fs::path& cache) {
    PipelineConfig c;
    c.input_path = dir / "corpus.json";
    c.cache_dir = cache;
    c.output_path = cache / "cherry_dataset.json";
    c.ngram_order = 2;
    c.embed_dim = 16;
    c.clusters_k = 3;
    c.per_cluster_m = 2;
    c.fraction = 0.25;
    c.seed = 1;
    c.parallelism = parallelism;
    run_pipeline(c);
    return std::make_pair(slurp(c.output_path),
                          slurp(cache / artifact::kScores));
  };
  auto [data_seq, scores_seq] = run_with(1, dir / "c1");
  auto [data_par, scores_par] = run_with(6, dir / "c6");
  CHECK(data_seq == data_par);
  CHECK(scores_seq == scores_par);
}

TEST_CASE("second run reuses the score cache byte-for-byte") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);
  run_pipeline(config);
  std::string scores_before = slurp(config.cache_dir / artifact::kScores);
  std::string dataset_before = slurp(config.output_path);

  run_pipeline(config);  // same cache_dir: cached scores must satisfy it
  CHECK(slurp(config.cache_dir / artifact::kScores) == scores_before);
  CHECK(slurp(config.output_path) == dataset_before);
}

TEST_CASE("resume reproduces an uninterrupted run") {
  fs::path dir = temp_dir();
  testgen::write_corpus(dir / "corpus.json", 70, 0xD00D);
  auto config_for = [&](const fs::path& cache) {
    PipelineConfig c;
    c.input_path = dir / "corpus.json";
    c.cache_dir = cache;
    c.output_path = cache / "cherry_dataset.json";
    c.ngram_order = 2;
    c.embed_dim = 32;
    c.clusters_k = 5;
    c.per_cluster_m = 2;
    c.fraction = 0.1;
    c.seed = 1234;
    return c;
  };

  // Uninterrupted baseline.
  PipelineConfig full = config_for(dir / "cache_full");
  run_pipeline(full);

  // Interrupted run: stop after scoring, then resume to completion.
  PipelineConfig interrupted = config_for(dir / "cache_resume");
  execute_pipeline(interrupted, /*reuse=*/false, Phase::score);
  CHECK_FALSE(fs::exists(interrupted.output_path));
  RunManifest resumed = resume(interrupted);
  CHECK(resumed.selected > 0);

  CHECK(slurp(interrupted.output_path) == slurp(full.output_path));
  CHECK(slurp(interrupted.cache_dir / artifact::kScores) ==
        slurp(full.cache_dir / artifact::kScores));
  CHECK(manifest_modulo_paths(slurp(interrupted.cache_dir / artifact::kManifest)) ==
        manifest_modulo_paths(slurp(full.cache_dir / artifact::kManifest)));
}

TEST_CASE("resume refuses a cache written by a different config") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);
  run_pipeline(config);

  PipelineConfig changed = config;
  changed.fraction = 0.3;
  CHECK_THROWS_WITH_AS(resume(changed), doctest::Contains("fraction"), Error);

  PipelineConfig changed2 = config;
  changed2.seed = 8;
  CHECK_THROWS_WITH_AS(resume(changed2), doctest::Contains("seed"), Error);

  // The original config still resumes cleanly.
  RunManifest m = resume(config);
  CHECK(m.selected == 12);
}

TEST_CASE("pre-experience size override controls the fit budget") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);

  SUBCASE("explicit size") {
    config.pre_experience_size = 7;
    config.cache_dir = dir / "cache7";
    config.output_path = config.cache_dir / "out.json";
    RunManifest m = run_pipeline(config);
    CHECK(m.pre_experience == 7);
  }

  SUBCASE("zero skips the fit") {
    config.pre_experience_size = 0;
    config.cache_dir = dir / "cache0";
    config.output_path = config.cache_dir / "out.json";
    RunManifest m = run_pipeline(config);
    CHECK(m.pre_experience == 0);
    CHECK(m.theta_fingerprint == m.theta0_fingerprint);
    CHECK_FALSE(fs::exists(config.cache_dir / artifact::kTheta));
  }
}

TEST_CASE("pre-experience strategies hit their budgets") {
  fs::path dir = temp_dir();
  for (const char* strategy : {"diversity", "random", "difficulty"}) {
    PipelineConfig config = small_config(dir);
    config.pre_experience_strategy = strategy;
    config.cache_dir = dir / (std::string("cache_") + strategy);
    config.output_path = config.cache_dir / "out.json";
    RunManifest m = run_pipeline(config);
    CHECK_MESSAGE(m.pre_experience == 10, strategy);
    json pre = json::parse(slurp(config.cache_dir / artifact::kPreExperience));
    CHECK(pre["strategy"] == strategy);
    CHECK(pre["ids"].size() == 10);
  }
}

TEST_CASE("low_ifd and high_ca skip the misalignment filter") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir, 80);
  config.strategy = "low_ifd";
  RunManifest m = run_pipeline(config);

  std::vector<ScoreRecord> records =
      read_score_cache(config.cache_dir / artifact::kScores);
  std::vector<oracle::Selectable> all;
  for (const ScoreRecord& r : records) all.push_back({r.sample_id, r.ifd, r.ca});
  // The reference selects from ALL records: no filter for this baseline.
  std::vector<std::string> want =
      oracle::reference_select(all, "low_ifd", 0.2, records.size());
  json selected = json::parse(slurp(config.cache_dir / artifact::kSelectedIds));
  std::vector<std::string> got;
  for (const auto& id : selected) got.push_back(id.get<std::string>());
  CHECK(got == want);
  CHECK(m.selected == want.size());
}

TEST_CASE("random and diversity strategies hit the exact target") {
  fs::path dir = temp_dir();
  for (const char* strategy : {"random", "diversity"}) {
    PipelineConfig config = small_config(dir);
    config.strategy = strategy;
    config.cache_dir = dir / (std::string("cache_sel_") + strategy);
    config.output_path = config.cache_dir / "out.json";
    RunManifest m = run_pipeline(config);
    // Both strategies draw from the filtered pool; they may shortfall only
    // if the pool is smaller than the target.
    CHECK_MESSAGE(m.selected ==
                      std::min<std::size_t>(12, m.filtered),
                  strategy);
  }
}

TEST_CASE("empty and fully-rejected datasets are data errors") {
  fs::path dir = temp_dir();
  std::ofstream(dir / "empty.json") << "[]";
  PipelineConfig c;
  c.input_path = dir / "empty.json";
  c.cache_dir = dir / "cache_e";
  c.output_path = c.cache_dir / "out.json";
  CHECK_THROWS_AS(run_pipeline(c), Error);

  std::ofstream(dir / "allbad.json")
      << R"([{"instruction": "", "output": ""}, {"instruction": "x", "output": ""}])";
  c.input_path = dir / "allbad.json";
  c.cache_dir = dir / "cache_ab";
  CHECK_THROWS_AS(run_pipeline(c), Error);
}

TEST_CASE("partial runs stop at the requested phase") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);
  execute_pipeline(config, /*reuse=*/true, Phase::embed);
  CHECK(fs::exists(config.cache_dir / artifact::kEmbeddings));
  CHECK_FALSE(fs::exists(config.cache_dir / artifact::kScores));
  CHECK_FALSE(fs::exists(config.output_path));

  execute_pipeline(config, /*reuse=*/true, Phase::score);
  CHECK(fs::exists(config.cache_dir / artifact::kScores));
  CHECK_FALSE(fs::exists(config.output_path));

  execute_pipeline(config, /*reuse=*/true, Phase::emit);
  CHECK(fs::exists(config.output_path));
}

TEST_CASE("analyze produces a validating report and aligned csv") {
  fs::path dir = temp_dir();
  PipelineConfig config = small_config(dir);
  run_pipeline(config);
  std::string scores_before = slurp(config.cache_dir / artifact::kScores);

  analyze_pipeline(config, 0.1);
  CHECK(slurp(config.cache_dir / artifact::kScores) == scores_before);

  ordered_json report =
      ordered_json::parse(slurp(config.cache_dir / artifact::kReport));
  CHECK(validate_report(report).empty());
  CHECK(report["stats"]["count"] == 60);
  CHECK(report.contains("cluster_density"));

  std::ifstream csv(config.cache_dir / artifact::kProjection);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 61);  // header + one row per sample

  CHECK_THROWS_AS(analyze_pipeline(config, 0.0), Error);
  CHECK_THROWS_AS(analyze_pipeline(config, 0.6), Error);
}
