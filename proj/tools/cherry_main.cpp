// Command-line front end: every subcommand is a thin wrapper over the
// pipeline/eval libraries.  Exit codes: 0 ok, 2 config, 3 data, 4 backend.
#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cherry/errors.hpp"
#include "cherry/eval.hpp"
#include "cherry/pipeline.hpp"
#include "cherry/version.hpp"

namespace {

using cherry::PipelineConfig;

struct Overrides {
  std::string input;
  std::string output;
  std::string cache_dir;
  std::string template_name;
  std::string templates_file;
  std::string scorer_kind;
  std::string strategy;
  std::string pre_strategy;
  std::string remote_url;
  std::string remote_model;
  int order = 0;
  double smoothing = 0.0;
  std::size_t dim = 0;
  int clusters = 0;
  int per_cluster = 0;
  std::int64_t pre_size = 0;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  int parallelism = 0;
  int remote_timeout = 0;
  int remote_retries = 0;
};

void add_pipeline_options(CLI::App* sub, Overrides& o) {
  sub->add_option("--input", o.input, "dataset JSON file");
  sub->add_option("--output", o.output, "cherry dataset destination");
  sub->add_option("--cache-dir", o.cache_dir, "artifact/cache directory");
  sub->add_option("--template", o.template_name, "prompt template name");
  sub->add_option("--templates-file", o.templates_file,
                  "extra template resource file");
  sub->add_option("--scorer", o.scorer_kind, "builtin or remote");
  sub->add_option("--order", o.order, "n-gram order");
  sub->add_option("--smoothing", o.smoothing, "add-k smoothing constant");
  sub->add_option("--dim", o.dim, "embedding dimension");
  sub->add_option("--clusters", o.clusters, "k for clustering");
  sub->add_option("--per-cluster", o.per_cluster,
                  "samples drawn per cluster for the pre-experience set");
  sub->add_option("--pre-size", o.pre_size,
                  "pre-experience budget override (0 skips the fit)");
  sub->add_option("--pre-strategy", o.pre_strategy,
                  "diversity, random or difficulty");
  sub->add_option("--fraction", o.fraction, "selected share of the dataset");
  sub->add_option("--strategy", o.strategy,
                  "top_ifd, low_ifd, high_ca, random or diversity");
  sub->add_option("--parallelism", o.parallelism, "scoring worker threads");
  sub->add_option("--remote-url", o.remote_url, "remote backend base URL");
  sub->add_option("--remote-model", o.remote_model, "remote model name");
  sub->add_option("--remote-timeout", o.remote_timeout,
                  "remote timeout in seconds");
  sub->add_option("--remote-retries", o.remote_retries,
                  "remote retry budget");
}

// Config file first, then flags on top.
PipelineConfig assemble_config(const std::string& config_path,
                               const CLI::App* sub, const Overrides& o,
                               bool seed_given, std::uint64_t seed) {
  PipelineConfig config;
  if (!config_path.empty()) config = cherry::load_config(config_path);
  if (sub->count("--input")) config.input_path = o.input;
  if (sub->count("--output")) config.output_path = o.output;
  if (sub->count("--cache-dir")) config.cache_dir = o.cache_dir;
  if (sub->count("--template")) config.template_name = o.template_name;
  if (sub->count("--templates-file")) config.templates_path = o.templates_file;
  if (sub->count("--scorer")) config.scorer_kind = o.scorer_kind;
  if (sub->count("--order")) config.ngram_order = o.order;
  if (sub->count("--smoothing")) config.smoothing_k = o.smoothing;
  if (sub->count("--dim")) config.embed_dim = o.dim;
  if (sub->count("--clusters")) config.clusters_k = o.clusters;
  if (sub->count("--per-cluster")) config.per_cluster_m = o.per_cluster;
  if (sub->count("--pre-size")) {
    if (o.pre_size < 0) {
      cherry::throw_config("--pre-size must be >= 0");
    }
    config.pre_experience_size = static_cast<std::size_t>(o.pre_size);
  }
  if (sub->count("--pre-strategy")) {
    config.pre_experience_strategy = o.pre_strategy;
  }
  if (sub->count("--fraction")) config.fraction = o.fraction;
  if (sub->count("--strategy")) config.strategy = o.strategy;
  if (sub->count("--parallelism")) config.parallelism = o.parallelism;
  if (sub->count("--remote-url")) config.remote.base_url = o.remote_url;
  if (sub->count("--remote-model")) config.remote.model = o.remote_model;
  if (sub->count("--remote-timeout")) {
    config.remote.timeout_seconds = o.remote_timeout;
  }
  if (sub->count("--remote-retries")) {
    config.remote.max_retries = o.remote_retries;
  }
  if (seed_given) config.seed = seed;
  if (config.output_path.empty() && !config.cache_dir.empty()) {
    config.output_path = config.cache_dir / "cherry_dataset.json";
  }
  return config;
}

void print_summary(const cherry::RunManifest& manifest,
                   const PipelineConfig& config) {
  std::cout << "loaded " << manifest.loaded << " samples ("
            << manifest.rejected << " rejected), pre-experience "
            << manifest.pre_experience << ", kept " << manifest.filtered
            << " after the misalignment filter, selected "
            << manifest.selected
            << (manifest.shortfall ? " (shortfall)" : "") << " -> "
            << config.output_path.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-guided selection of instruction-tuning data"};
  app.set_version_flag("--version", std::string(cherry::kToolVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "JSON config file")
      ->envname("CHERRY_CONFIG");
  CLI::Option* seed_opt =
      app.add_option("--seed", seed, "master seed (fans out per phase)");
  app.add_flag("--verbose", verbose, "diagnostics on stderr");

  Overrides o;
  CLI::App* cmd_run = app.add_subcommand("run", "full pipeline, fresh");
  CLI::App* cmd_resume =
      app.add_subcommand("resume", "pick up an interrupted run");
  CLI::App* cmd_embed = app.add_subcommand("embed", "embeddings only");
  CLI::App* cmd_preselect =
      app.add_subcommand("preselect", "pre-experience subset only");
  CLI::App* cmd_score =
      app.add_subcommand("score", "fit the scorer and score the dataset");
  CLI::App* cmd_select =
      app.add_subcommand("select", "filter, select and emit from cached scores");
  CLI::App* cmd_analyze =
      app.add_subcommand("analyze", "score statistics, densities, projection");
  for (CLI::App* sub : {cmd_run, cmd_resume, cmd_embed, cmd_preselect,
                        cmd_score, cmd_select, cmd_analyze}) {
    add_pipeline_options(sub, o);
  }
  double density_fraction = 0.05;
  cmd_analyze->add_option("--density-fraction", density_fraction,
                          "top/bottom share for cluster density, in (0, 0.5]");

  CLI::App* cmd_eval =
      app.add_subcommand("eval", "pairwise comparison harness");
  cmd_eval->require_subcommand(1);
  std::string eval_items;
  std::string eval_out;
  std::string eval_replies;
  std::string eval_votes;
  std::string eval_template;
  CLI::App* eval_build = cmd_eval->add_subcommand(
      "build", "write judge request lines for both orderings");
  eval_build->add_option("--items", eval_items, "comparison items JSONL")
      ->required();
  eval_build->add_option("--out", eval_out, "request JSONL destination")
      ->required();
  eval_build->add_option("--template-file", eval_template,
                         "judge prompt template JSON");
  CLI::App* eval_report = cmd_eval->add_subcommand(
      "report", "adjudicate judge replies into a win/tie/lose report");
  eval_report->add_option("--items", eval_items, "comparison items JSONL")
      ->required();
  eval_report->add_option("--replies", eval_replies, "judge replies JSONL")
      ->required();
  eval_report->add_option("--out", eval_out, "report JSON destination")
      ->required();
  CLI::App* eval_human = cmd_eval->add_subcommand(
      "human", "tally majority-vote human comparisons");
  eval_human->add_option("--votes", eval_votes, "votes JSONL")->required();
  eval_human->add_option("--out", eval_out, "report JSON destination")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(cherry::ErrorKind::config);
  }

  try {
    const bool seed_given = seed_opt->count() > 0;
    if (cmd_eval->parsed()) {
      if (eval_build->parsed()) {
        cherry::JudgePromptTemplate tmpl =
            eval_template.empty()
                ? cherry::JudgePromptTemplate::builtin()
                : cherry::JudgePromptTemplate::load(eval_template);
        auto items = cherry::read_comparison_items(eval_items);
        cherry::write_judge_requests(items, tmpl, eval_out);
        std::cout << "wrote " << 2 * items.size() << " judge requests for "
                  << items.size() << " items -> " << eval_out << '\n';
      } else if (eval_report->parsed()) {
        auto items = cherry::read_comparison_items(eval_items);
        auto replies = cherry::read_judge_replies(eval_replies);
        cherry::EvalReport report = cherry::adjudicate_batch(items, replies);
        cherry::write_eval_report(report, eval_out);
        std::cout << "judged " << report.judged << " items (" << report.invalid
                  << " invalid) -> " << eval_out << '\n';
      } else {
        cherry::EvalReport report = cherry::tally_human_votes(eval_votes);
        cherry::write_eval_report(report, eval_out);
        std::cout << "tallied " << report.judged << " voted items -> "
                  << eval_out << '\n';
      }
      return 0;
    }

    CLI::App* sub = app.get_subcommands().front();
    PipelineConfig config =
        assemble_config(config_path, sub, o, seed_given, seed);

    if (cmd_run->parsed()) {
      cherry::RunManifest manifest = cherry::run_pipeline(config, verbose);
      print_summary(manifest, config);
    } else if (cmd_resume->parsed()) {
      cherry::RunManifest manifest = cherry::resume(config, verbose);
      print_summary(manifest, config);
    } else if (cmd_embed->parsed()) {
      cherry::execute_pipeline(config, /*reuse=*/true, cherry::Phase::embed,
                               verbose);
      std::cout << "embeddings ready under " << config.cache_dir.string()
                << '\n';
    } else if (cmd_preselect->parsed()) {
      cherry::RunManifest manifest = cherry::execute_pipeline(
          config, /*reuse=*/true, cherry::Phase::preselect, verbose);
      std::cout << "pre-experience subset of " << manifest.pre_experience
                << " samples ready under " << config.cache_dir.string() << '\n';
    } else if (cmd_score->parsed()) {
      cherry::execute_pipeline(config, /*reuse=*/true, cherry::Phase::score,
                               verbose);
      std::cout << "scores cached under " << config.cache_dir.string() << '\n';
    } else if (cmd_select->parsed()) {
      cherry::RunManifest manifest = cherry::execute_pipeline(
          config, /*reuse=*/true, cherry::Phase::emit, verbose);
      print_summary(manifest, config);
    } else if (cmd_analyze->parsed()) {
      cherry::analyze_pipeline(config, density_fraction, verbose);
      std::cout << "report written to "
                << (config.cache_dir / cherry::artifact::kReport).string()
                << '\n';
    }
    return 0;
  } catch (const cherry::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}
