#include "cherry/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "cherry/analysis.hpp"
#include "cherry/errors.hpp"
#include "cherry/util.hpp"
#include "cherry/version.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  std::uint64_t h = kFnvOffset;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    if (in.eof()) break;
  }
  return h;
}

// Everything that must agree between the run that wrote the cache and the
// run trying to reuse it.  Paths that only affect where results go (output,
// cache_dir) and knobs that cannot change bytes (parallelism) stay out.
ordered_json compatibility_stamp(const PipelineConfig& config,
                                 std::uint64_t input_digest) {
  ordered_json stamp;
  stamp["schema_version"] = kArtifactSchemaVersion;
  stamp["tool_version"] = std::string(kToolVersion);
  stamp["input_digest"] = to_hex16(input_digest);
  stamp["template_name"] = config.template_name;
  stamp["scorer_kind"] = config.scorer_kind;
  stamp["ngram_order"] = config.ngram_order;
  stamp["smoothing_k"] = format_double(config.smoothing_k);
  stamp["embed_dim"] = config.embed_dim;
  stamp["clusters_k"] = config.clusters_k;
  stamp["per_cluster_m"] = config.per_cluster_m;
  if (config.pre_experience_size.has_value()) {
    stamp["pre_experience_size_override"] = *config.pre_experience_size;
  } else {
    stamp["pre_experience_size_override"] = nullptr;
  }
  stamp["pre_experience_strategy"] = config.pre_experience_strategy;
  stamp["fraction"] = format_double(config.fraction);
  stamp["strategy"] = config.strategy;
  stamp["seed"] = config.seed;
  if (config.scorer_kind == "remote") {
    stamp["remote_url"] = config.remote.base_url;
    stamp["remote_model"] = config.remote.model;
  }
  return stamp;
}

void write_json(const ordered_json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out.good()) throw_data("short write to " + path.string());
}

std::optional<ordered_json> try_read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    return ordered_json::parse(in);
  } catch (const ordered_json::parse_error&) {
    return std::nullopt;
  }
}

class PhaseTimer {
 public:
  PhaseTimer(RunManifest& manifest, const char* phase, bool reused = false)
      : manifest_(manifest),
        index_(manifest.timings.size()),
        start_(std::chrono::steady_clock::now()) {
    manifest_.timings.push_back({phase, 0.0, reused});
  }
  ~PhaseTimer() {
    auto end = std::chrono::steady_clock::now();
    manifest_.timings[index_].seconds =
        std::chrono::duration<double>(end - start_).count();
  }
  void mark_reused() { manifest_.timings[index_].reused = true; }

 private:
  RunManifest& manifest_;
  std::size_t index_;
  std::chrono::steady_clock::time_point start_;
};

struct PreExperience {
  std::string strategy = "none";
  std::vector<std::string> ids;  // dataset order
};

}  // namespace

void PipelineConfig::validate() const {
  if (input_path.empty()) throw_config("input_path is required");
  if (output_path.empty()) throw_config("output_path is required");
  if (cache_dir.empty()) throw_config("cache_dir is required");
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw_config("fraction must be in (0, 1]");
  }
  if (ngram_order < 1) throw_config("ngram_order must be >= 1");
  if (!(smoothing_k > 0.0) || !std::isfinite(smoothing_k)) {
    throw_config("smoothing_k must be a finite positive number");
  }
  if (embed_dim < 1) throw_config("embed_dim must be >= 1");
  if (clusters_k < 1) throw_config("clusters_k must be >= 1");
  if (per_cluster_m < 1) throw_config("per_cluster_m must be >= 1");
  if (parallelism < 1) throw_config("parallelism must be >= 1");
  if (scorer_kind != "builtin" && scorer_kind != "remote") {
    throw_config("scorer_kind must be 'builtin' or 'remote'");
  }
  if (scorer_kind == "remote") {
    if (remote.base_url.empty()) throw_config("remote.base_url is required");
    if (remote.model.empty()) throw_config("remote.model is required");
  }
  if (pre_experience_strategy != "diversity" &&
      pre_experience_strategy != "random" &&
      pre_experience_strategy != "difficulty") {
    throw_config(
        "pre_experience_strategy must be diversity, random or difficulty");
  }
  SelectionStrategy::parse(strategy);  // validates the name
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_config("cannot open config file " + path.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw_config("malformed config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) {
    throw_config(path.string() + ": config must be a JSON object");
  }

  PipelineConfig config;
  const std::set<std::string> known = {
      "input_path",     "output_path",      "cache_dir",
      "template_name",  "templates_path",   "scorer_kind",
      "ngram_order",    "smoothing_k",      "embed_dim",
      "clusters_k",     "per_cluster_m",    "pre_experience_size_override",
      "pre_experience_strategy",            "fraction",
      "strategy",       "seed",             "parallelism",
      "remote"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.count(key)) {
      throw_config(path.string() + ": unknown config key '" + key + "'");
    }
  }

  const auto get_string = [&](const char* key, std::string& out) {
    if (auto it = doc.find(key); it != doc.end()) {
      if (!it->is_string()) {
        throw_config(path.string() + ": '" + key + "' must be a string");
      }
      out = it->get<std::string>();
    }
  };
  const auto get_int = [&](const char* key, auto& out) {
    if (auto it = doc.find(key); it != doc.end()) {
      if (!it->is_number_integer()) {
        throw_config(path.string() + ": '" + key + "' must be an integer");
      }
      out = it->get<std::decay_t<decltype(out)>>();
    }
  };

  std::string p;
  get_string("input_path", p);
  if (!p.empty()) config.input_path = p;
  p.clear();
  get_string("output_path", p);
  if (!p.empty()) config.output_path = p;
  p.clear();
  get_string("cache_dir", p);
  if (!p.empty()) config.cache_dir = p;
  p.clear();
  get_string("templates_path", p);
  if (!p.empty()) config.templates_path = p;
  get_string("template_name", config.template_name);
  get_string("scorer_kind", config.scorer_kind);
  get_int("ngram_order", config.ngram_order);
  if (auto it = doc.find("smoothing_k"); it != doc.end()) {
    if (!it->is_number()) {
      throw_config(path.string() + ": 'smoothing_k' must be a number");
    }
    config.smoothing_k = it->get<double>();
  }
  get_int("embed_dim", config.embed_dim);
  get_int("clusters_k", config.clusters_k);
  get_int("per_cluster_m", config.per_cluster_m);
  if (auto it = doc.find("pre_experience_size_override"); it != doc.end()) {
    if (it->is_null()) {
      config.pre_experience_size.reset();
    } else if (it->is_number_unsigned() ||
               (it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
      config.pre_experience_size = it->get<std::size_t>();
    } else {
      throw_config(path.string() +
                   ": 'pre_experience_size_override' must be a non-negative integer");
    }
  }
  get_string("pre_experience_strategy", config.pre_experience_strategy);
  if (auto it = doc.find("fraction"); it != doc.end()) {
    if (!it->is_number()) {
      throw_config(path.string() + ": 'fraction' must be a number");
    }
    config.fraction = it->get<double>();
  }
  get_string("strategy", config.strategy);
  if (auto it = doc.find("seed"); it != doc.end()) {
    if (!it->is_number_integer()) {
      throw_config(path.string() + ": 'seed' must be an integer");
    }
    config.seed = it->get<std::uint64_t>();
  }
  get_int("parallelism", config.parallelism);

  if (auto it = doc.find("remote"); it != doc.end()) {
    if (!it->is_object()) {
      throw_config(path.string() + ": 'remote' must be an object");
    }
    for (const auto& [key, _] : it->items()) {
      if (key != "base_url" && key != "model" && key != "timeout_seconds" &&
          key != "max_retries") {
        throw_config(path.string() + ": unknown remote key '" + key + "'");
      }
    }
    if (auto jt = it->find("base_url"); jt != it->end()) {
      config.remote.base_url = jt->get<std::string>();
    }
    if (auto jt = it->find("model"); jt != it->end()) {
      config.remote.model = jt->get<std::string>();
    }
    if (auto jt = it->find("timeout_seconds"); jt != it->end()) {
      config.remote.timeout_seconds = jt->get<int>();
    }
    if (auto jt = it->find("max_retries"); jt != it->end()) {
      config.remote.max_retries = jt->get<int>();
    }
  }
  return config;
}

nlohmann::ordered_json config_snapshot(const PipelineConfig& config) {
  ordered_json snap;
  snap["input_path"] = config.input_path.string();
  snap["output_path"] = config.output_path.string();
  snap["cache_dir"] = config.cache_dir.string();
  snap["template_name"] = config.template_name;
  if (config.templates_path.has_value()) {
    snap["templates_path"] = config.templates_path->string();
  }
  snap["scorer_kind"] = config.scorer_kind;
  snap["ngram_order"] = config.ngram_order;
  snap["smoothing_k"] = config.smoothing_k;
  snap["embed_dim"] = config.embed_dim;
  snap["clusters_k"] = config.clusters_k;
  snap["per_cluster_m"] = config.per_cluster_m;
  if (config.pre_experience_size.has_value()) {
    snap["pre_experience_size_override"] = *config.pre_experience_size;
  } else {
    snap["pre_experience_size_override"] = nullptr;
  }
  snap["pre_experience_strategy"] = config.pre_experience_strategy;
  snap["fraction"] = config.fraction;
  snap["strategy"] = config.strategy;
  snap["seed"] = config.seed;
  snap["parallelism"] = config.parallelism;
  if (config.scorer_kind == "remote") {
    ordered_json remote;
    remote["base_url"] = config.remote.base_url;
    remote["model"] = config.remote.model;
    remote["timeout_seconds"] = config.remote.timeout_seconds;
    remote["max_retries"] = config.remote.max_retries;
    snap["remote"] = std::move(remote);
  }
  return snap;
}

RunManifest execute_pipeline(const PipelineConfig& config, bool reuse,
                             Phase until, bool verbose) {
  config.validate();
  std::filesystem::create_directories(config.cache_dir);
  const auto note = [&](const std::string& msg) {
    if (verbose) std::cerr << "[cherry] " << msg << '\n';
  };

  RunManifest manifest;
  manifest.tool_version = std::string(kToolVersion);
  manifest.config = config_snapshot(config);

  // ---- compatibility stamp -------------------------------------------------
  const std::uint64_t input_digest = file_digest(config.input_path);
  const ordered_json stamp = compatibility_stamp(config, input_digest);
  const std::filesystem::path stamp_path = config.cache_dir / artifact::kStamp;
  if (reuse) {
    if (auto existing = try_read_json(stamp_path); existing.has_value()) {
      if (*existing != stamp) {
        std::string diffs;
        for (const auto& [key, value] : stamp.items()) {
          if (!existing->contains(key) || (*existing)[key] != value) {
            if (!diffs.empty()) diffs += ", ";
            diffs += key;
          }
        }
        for (const auto& [key, _] : existing->items()) {
          if (!stamp.contains(key)) {
            if (!diffs.empty()) diffs += ", ";
            diffs += key;
          }
        }
        throw_config("cache_dir " + config.cache_dir.string() +
                     " was written by an incompatible configuration"
                     " (differs in: " + diffs + "); use a fresh cache_dir or"
                     " rerun with matching settings");
      }
      note("cache stamp matches; reusing compatible artifacts");
    }
  }
  write_json(stamp, stamp_path);

  // ---- phase 0: load ---------------------------------------------------------
  Dataset dataset;
  {
    PhaseTimer timer(manifest, "load");
    dataset = load_dataset(config.input_path);
  }
  manifest.loaded = dataset.samples.size();
  manifest.rejected = dataset.rejected.size();
  if (verbose) {
    for (const RejectedSample& r : dataset.rejected) {
      note("rejected sample at index " + std::to_string(r.index) + ": " +
           r.reason);
    }
  }
  if (dataset.samples.empty()) {
    throw_data(config.input_path.string() + " holds no usable samples");
  }
  const std::vector<Sample>& samples = dataset.samples;

  TemplateMap templates = builtin_templates();
  if (config.templates_path.has_value()) {
    for (auto& [name, tmpl] : load_templates(*config.templates_path)) {
      templates[name] = std::move(tmpl);  // file entries override builtins
    }
  }
  const PromptTemplate& tmpl = get_template(templates, config.template_name);

  std::vector<std::string> ids;
  ids.reserve(samples.size());
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ids.push_back(samples[i].id);
    index_of.emplace(samples[i].id, i);
  }

  // ---- scorers ---------------------------------------------------------------
  std::unique_ptr<Scorer> theta0;
  std::unique_ptr<Embedder> embedder;
  if (config.scorer_kind == "builtin") {
    theta0 = std::make_unique<NGramScorer>(
        NGramScorer::untrained(config.ngram_order, config.smoothing_k));
    embedder = std::make_unique<HashedBagEmbedder>(config.embed_dim);
  } else {
    theta0 = std::make_unique<RemoteScorer>(config.remote);
    embedder = std::make_unique<RemoteEmbedder>(config.remote, config.embed_dim);
  }
  manifest.theta0_fingerprint = theta0->fingerprint();
  manifest.embedder_fingerprint = embedder->fingerprint();

  const std::size_t pre_budget = config.pre_experience_size.value_or(
      static_cast<std::size_t>(config.clusters_k) *
      static_cast<std::size_t>(config.per_cluster_m));
  // The remote scorer cannot be re-fit; it plays both the raw and the
  // pre-experienced role (a fully-trained backend is its own experience).
  const bool fit_enabled = config.scorer_kind == "builtin" && pre_budget > 0;

  if (until < Phase::embed) return manifest;

  // ---- phase 1: embed --------------------------------------------------------
  EmbeddingSet embeddings;
  {
    PhaseTimer timer(manifest, "embed");
    const std::filesystem::path path = config.cache_dir / artifact::kEmbeddings;
    bool loaded = false;
    if (reuse && std::filesystem::exists(path)) {
      try {
        EmbeddingSet cached = read_embeddings(path);
        if (cached.ids == ids && cached.dim == config.embed_dim) {
          embeddings = std::move(cached);
          loaded = true;
          timer.mark_reused();
          note("reusing cached embeddings");
        }
      } catch (const Error&) {
        note("cached embeddings unreadable; recomputing");
      }
    }
    if (!loaded) {
      for (const Sample& sample : samples) {
        embeddings.append(sample.id,
                          embedder->embed(render(sample, tmpl).question_text));
      }
      write_embeddings(embeddings, path);
    }
  }

  if (until < Phase::preselect) return manifest;

  // ---- phase 2: preselect ----------------------------------------------------
  PreExperience pre;
  {
    PhaseTimer timer(manifest, "preselect");
    const std::filesystem::path path =
        config.cache_dir / artifact::kPreExperience;
    if (!fit_enabled) {
      pre.strategy = "none";
      ordered_json doc;
      doc["schema_version"] = kArtifactSchemaVersion;
      doc["strategy"] = pre.strategy;
      doc["size"] = 0;
      doc["ids"] = ordered_json::array();
      write_json(doc, path);
    } else {
      pre.strategy = config.pre_experience_strategy;
      bool loaded = false;
      if (reuse) {
        if (auto doc = try_read_json(path); doc.has_value()) {
          try {
            if (doc->at("strategy").get<std::string>() == pre.strategy) {
              std::vector<std::string> cached;
              for (const auto& id : doc->at("ids")) {
                cached.push_back(id.get<std::string>());
              }
              bool all_known = true;
              for (const std::string& id : cached) {
                if (!index_of.count(id)) {
                  all_known = false;
                  break;
                }
              }
              if (all_known && !cached.empty()) {
                pre.ids = std::move(cached);
                loaded = true;
                timer.mark_reused();
                note("reusing cached pre-experience subset");
              }
            }
          } catch (const ordered_json::exception&) {
            // fall through to recompute
          }
        }
      }
      if (!loaded) {
        if (pre.strategy == "diversity") {
          const int k_eff = static_cast<int>(std::min<std::size_t>(
              static_cast<std::size_t>(config.clusters_k), samples.size()));
          ClusterAssignment assignment =
              kmeans(embeddings, k_eff, derive_seed(config.seed, "kmeans"));
          write_assignment(assignment,
                           config.cache_dir / artifact::kAssignment);
          int m = config.per_cluster_m;
          if (config.pre_experience_size.has_value()) {
            m = static_cast<int>(
                (pre_budget + static_cast<std::size_t>(k_eff) - 1) /
                static_cast<std::size_t>(k_eff));
          }
          pre.ids = sample_per_cluster(assignment, ids, m,
                                       derive_seed(config.seed, "preselect"));
          if (pre.ids.size() > pre_budget &&
              config.pre_experience_size.has_value()) {
            pre.ids.resize(pre_budget);
          }
        } else if (pre.strategy == "random") {
          SplitMix64 rng(derive_seed(config.seed, "preselect"));
          std::vector<std::size_t> order(samples.size());
          for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
          std::size_t want = std::min(pre_budget, order.size());
          std::vector<std::size_t> picked;
          for (std::size_t j = 0; j < want; ++j) {
            std::size_t swap_with = j + rng.index(order.size() - j);
            std::swap(order[j], order[swap_with]);
            picked.push_back(order[j]);
          }
          std::sort(picked.begin(), picked.end());
          for (std::size_t i : picked) pre.ids.push_back(ids[i]);
        } else {  // difficulty: hardest samples under the untrained scorer
          ScoreRunStats stats;
          std::vector<ScoreRecord> raw =
              score_dataset(*theta0, samples, tmpl,
                            config.cache_dir / artifact::kScoresTheta0,
                            {config.parallelism}, &stats);
          note("difficulty preselect: " + std::to_string(stats.computed) +
               " scored, " + std::to_string(stats.cache_hits) + " cached");
          FilterResult filtered = filter_misaligned(raw);
          SelectionStrategy top;
          top.kind = StrategyKind::top_ifd;
          pre.ids = select_count(filtered.kept, top, pre_budget).ids;
        }
        ordered_json doc;
        doc["schema_version"] = kArtifactSchemaVersion;
        doc["strategy"] = pre.strategy;
        doc["size"] = pre.ids.size();
        doc["ids"] = pre.ids;
        write_json(doc, path);
      }
    }
  }
  manifest.pre_experience = pre.ids.size();

  if (until < Phase::fit) return manifest;

  // ---- phase 3: fit the pre-experienced scorer -------------------------------
  std::unique_ptr<Scorer> theta;
  {
    PhaseTimer timer(manifest, "fit");
    if (!fit_enabled) {
      manifest.theta_fingerprint = theta0->fingerprint();
      note("pre-experience disabled; scoring with the untrained model");
    } else {
      const std::filesystem::path path = config.cache_dir / artifact::kTheta;
      bool loaded = false;
      if (reuse && std::filesystem::exists(path)) {
        try {
          NGramScorer cached = NGramScorer::load_snapshot(path);
          if (cached.order() == config.ngram_order &&
              format_double(cached.smoothing()) ==
                  format_double(config.smoothing_k)) {
            theta = std::make_unique<NGramScorer>(std::move(cached));
            loaded = true;
            timer.mark_reused();
            note("reusing cached pre-experienced scorer");
          }
        } catch (const Error&) {
          note("cached scorer snapshot unreadable; refitting");
        }
      }
      if (!loaded) {
        std::vector<RenderedPair> corpus;
        corpus.reserve(pre.ids.size());
        for (const std::string& id : pre.ids) {
          corpus.push_back(render(samples[index_of.at(id)], tmpl));
        }
        NGramScorer fitted =
            NGramScorer::fit(corpus, config.ngram_order, config.smoothing_k);
        fitted.save_snapshot(path);
        theta = std::make_unique<NGramScorer>(std::move(fitted));
      }
      manifest.theta_fingerprint = theta->fingerprint();
    }
  }
  const Scorer& scorer = theta ? *theta : *theta0;

  if (until < Phase::score) return manifest;

  // ---- phase 4: score ---------------------------------------------------------
  std::vector<ScoreRecord> records;
  {
    PhaseTimer timer(manifest, "score");
    ScoreRunStats stats;
    records = score_dataset(scorer, samples, tmpl,
                            config.cache_dir / artifact::kScores,
                            {config.parallelism}, &stats);
    if (stats.computed == 0) timer.mark_reused();
    note("scoring: " + std::to_string(stats.computed) + " computed, " +
         std::to_string(stats.cache_hits) + " cache hits, " +
         std::to_string(stats.stale_fingerprint) + " stale entries ignored, " +
         std::to_string(stats.corrupt_lines) + " corrupt lines skipped");
  }

  if (until < Phase::filter) return manifest;

  // ---- phase 5: filter ---------------------------------------------------------
  FilterResult filtered;
  {
    PhaseTimer timer(manifest, "filter");
    filtered = filter_misaligned(records);
  }
  manifest.filtered = filtered.kept.size();
  note("filter: kept " + std::to_string(filtered.kept.size()) + ", dropped " +
       std::to_string(filtered.dropped.size()));

  if (until < Phase::select) return manifest;

  // ---- phase 6: select ----------------------------------------------------------
  SelectionResult selection;
  SelectionStrategy strategy = SelectionStrategy::parse(config.strategy);
  {
    PhaseTimer timer(manifest, "select");
    strategy.seed = derive_seed(config.seed, "select");
    strategy.clusters = config.clusters_k;
    // low_ifd / high_ca are adversarial baselines and bypass the filter;
    // every other strategy draws from the cleaned pool.
    const bool bypass_filter = strategy.kind == StrategyKind::low_ifd ||
                               strategy.kind == StrategyKind::high_ca;
    const std::vector<ScoreRecord>& candidates =
        bypass_filter ? records : filtered.kept;
    selection = select(candidates, strategy, config.fraction, samples.size(),
                       &embeddings);
    if (selection.shortfall) {
      note("selection shortfall: wanted " + std::to_string(selection.target) +
           ", candidate pool held " + std::to_string(candidates.size()));
    }

    ordered_json ids_doc = selection.ids;
    write_json(ids_doc, config.cache_dir / artifact::kSelectedIds);
    ordered_json sel;
    sel["schema_version"] = kArtifactSchemaVersion;
    sel["strategy"] = strategy.name();
    sel["fraction"] = config.fraction;
    sel["seed"] = strategy.seed;
    sel["source_fingerprint"] = scorer.fingerprint();
    sel["target"] = selection.target;
    sel["selected"] = selection.ids.size();
    sel["shortfall"] = selection.shortfall;
    write_json(sel, config.cache_dir / artifact::kSelectionManifest);
  }
  manifest.selected = selection.ids.size();
  manifest.shortfall = selection.shortfall;

  if (until < Phase::emit) return manifest;

  // ---- phase 7: emit -------------------------------------------------------------
  {
    PhaseTimer timer(manifest, "emit");
    std::set<std::string> chosen(selection.ids.begin(), selection.ids.end());
    std::vector<Sample> cherry;
    cherry.reserve(selection.ids.size());
    for (const Sample& sample : samples) {
      if (chosen.count(sample.id)) cherry.push_back(sample);
    }
    save_dataset(cherry, config.output_path);

    ordered_json doc;
    doc["schema_version"] = kArtifactSchemaVersion;
    doc["tool_version"] = manifest.tool_version;
    doc["config"] = manifest.config;
    ordered_json counts;
    counts["loaded"] = manifest.loaded;
    counts["rejected"] = manifest.rejected;
    counts["pre_experience"] = manifest.pre_experience;
    counts["filtered"] = manifest.filtered;
    counts["selected"] = manifest.selected;
    doc["counts"] = std::move(counts);
    ordered_json prints;
    prints["theta0"] = manifest.theta0_fingerprint;
    prints["theta"] = manifest.theta_fingerprint;
    prints["embedder"] = manifest.embedder_fingerprint;
    doc["fingerprints"] = std::move(prints);
    ordered_json sel;
    sel["strategy"] = strategy.name();
    sel["fraction"] = config.fraction;
    sel["seed"] = strategy.seed;
    sel["target"] = selection.target;
    sel["shortfall"] = manifest.shortfall;
    doc["selection"] = std::move(sel);
    write_json(doc, config.cache_dir / artifact::kManifest);
  }

  // Wall-clock timings are the one non-reproducible output, so they live in
  // their own sidecar and never touch MANIFEST.json.
  {
    ordered_json doc;
    doc["schema_version"] = kArtifactSchemaVersion;
    ordered_json phases = ordered_json::array();
    for (const PhaseTiming& t : manifest.timings) {
      ordered_json row;
      row["phase"] = t.phase;
      row["seconds"] = t.seconds;
      row["reused"] = t.reused;
      phases.push_back(std::move(row));
    }
    doc["phases"] = std::move(phases);
    write_json(doc, config.cache_dir / artifact::kTimings);
  }
  return manifest;
}

void analyze_pipeline(const PipelineConfig& config, double density_fraction,
                      bool verbose) {
  if (!(density_fraction > 0.0) || density_fraction > 0.5) {
    throw_config("density fraction must be in (0, 0.5]");
  }
  // Make sure embeddings, the fitted scorer and the score cache exist.
  execute_pipeline(config, /*reuse=*/true, Phase::score, verbose);

  Dataset dataset = load_dataset(config.input_path);
  const std::vector<Sample>& samples = dataset.samples;
  TemplateMap templates = builtin_templates();
  if (config.templates_path.has_value()) {
    for (auto& [name, tmpl] : load_templates(*config.templates_path)) {
      templates[name] = std::move(tmpl);
    }
  }
  const PromptTemplate& tmpl = get_template(templates, config.template_name);
  std::vector<std::string> ids;
  for (const Sample& s : samples) ids.push_back(s.id);

  EmbeddingSet embeddings =
      read_embeddings(config.cache_dir / artifact::kEmbeddings);
  if (embeddings.ids != ids) {
    throw_data("cached embeddings do not cover the current dataset");
  }

  // Rebuild the scorer identity so cached records resolve.
  const std::size_t pre_budget = config.pre_experience_size.value_or(
      static_cast<std::size_t>(config.clusters_k) *
      static_cast<std::size_t>(config.per_cluster_m));
  std::unique_ptr<Scorer> scorer;
  if (config.scorer_kind == "builtin") {
    if (pre_budget > 0) {
      scorer = std::make_unique<NGramScorer>(
          NGramScorer::load_snapshot(config.cache_dir / artifact::kTheta));
    } else {
      scorer = std::make_unique<NGramScorer>(
          NGramScorer::untrained(config.ngram_order, config.smoothing_k));
    }
  } else {
    scorer = std::make_unique<RemoteScorer>(config.remote);
  }
  std::vector<ScoreRecord> records =
      score_dataset(*scorer, samples, tmpl,
                    config.cache_dir / artifact::kScores,
                    {config.parallelism});

  // Prefer the clustering the pipeline already produced; fall back to a
  // fresh (identically seeded) run when the preselect strategy skipped it.
  const int k_eff = static_cast<int>(std::min<std::size_t>(
      static_cast<std::size_t>(config.clusters_k), samples.size()));
  ClusterAssignment assignment;
  bool have_assignment = false;
  const std::filesystem::path assignment_path =
      config.cache_dir / artifact::kAssignment;
  if (std::filesystem::exists(assignment_path)) {
    try {
      ClusterAssignment cached = read_assignment(assignment_path);
      if (cached.labels.size() == samples.size() && cached.k == k_eff) {
        assignment = std::move(cached);
        have_assignment = true;
      }
    } catch (const Error&) {
      // recompute below
    }
  }
  if (!have_assignment) {
    assignment = kmeans(embeddings, k_eff, derive_seed(config.seed, "kmeans"));
  }

  AnalysisReport report;
  report.stats = compute_stats(records);
  report.densities =
      cluster_density(records, assignment, ids, density_fraction);

  SelectionStrategy top;
  top.kind = StrategyKind::top_ifd;
  SelectionStrategy bottom;
  bottom.kind = StrategyKind::low_ifd;
  std::set<std::string> top_ids;
  std::set<std::string> bottom_ids;
  for (const std::string& id :
       select(records, top, density_fraction, records.size()).ids) {
    top_ids.insert(id);
  }
  for (const std::string& id :
       select(records, bottom, density_fraction, records.size()).ids) {
    bottom_ids.insert(id);
  }

  PcaResult pca = pca_project(embeddings);
  report.ids = ids;
  report.projection = std::move(pca.points);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    report.ifd.push_back(records[i].ifd);
    report.cluster_of.push_back(assignment.labels[i]);
    report.top_flag.push_back(top_ids.count(ids[i]) != 0);
    report.bottom_flag.push_back(bottom_ids.count(ids[i]) != 0);
  }
  emit_report(report, config.cache_dir / artifact::kReport,
              config.cache_dir / artifact::kProjection);
}

}  // namespace cherry
