// Python bindings over the core library.  The Python surface mirrors the
// C++ one closely; heavy lifting stays in C++ and everything returned is a
// plain value type.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cherry/analysis.hpp"
#include "cherry/dataset.hpp"
#include "cherry/errors.hpp"
#include "cherry/eval.hpp"
#include "cherry/ifd.hpp"
#include "cherry/pipeline.hpp"
#include "cherry/remote.hpp"
#include "cherry/scorer.hpp"
#include "cherry/tokenize.hpp"
#include "cherry/util.hpp"
#include "cherry/version.hpp"

namespace py = pybind11;
using namespace cherry;

namespace {

// Exit-code-preserving translation so callers can key off err.kind.
void register_error(py::module_& m) {
  static py::exception<Error> exc(m, "CherryError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object type = exc;
      py::object inst = type(e.what());
      inst.attr("kind") = static_cast<int>(e.kind());
      PyErr_SetObject(type.ptr(), inst.ptr());
    }
  });
}

EmbeddingSet embedding_set_from(const std::vector<std::string>& ids,
                                const std::vector<std::vector<double>>& rows) {
  EmbeddingSet set;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    EmbeddingVector v;
    v.values = i < rows.size() ? rows[i] : std::vector<double>{};
    set.append(ids[i], v);
  }
  set.validate();
  return set;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "difficulty-based instruction data selection (core bindings)";
  m.attr("__version__") = std::string(kToolVersion);
  register_error(m);

  // ---- dataset -------------------------------------------------------------
  py::class_<Sample>(m, "Sample")
      .def(py::init<>())
      .def(py::init([](std::string id, std::string instruction,
                       std::string input, std::string output) {
             Sample s;
             s.id = std::move(id);
             s.instruction = std::move(instruction);
             s.input = std::move(input);
             s.output = std::move(output);
             return s;
           }),
           py::arg("id"), py::arg("instruction"), py::arg("input") = "",
           py::arg("output") = "")
      .def_readwrite("id", &Sample::id)
      .def_readwrite("instruction", &Sample::instruction)
      .def_readwrite("input", &Sample::input)
      .def_readwrite("output", &Sample::output)
      .def("has_input", &Sample::has_input);

  py::class_<RenderedPair>(m, "RenderedPair")
      .def(py::init<>())
      .def(py::init([](std::string question, std::string answer) {
             return RenderedPair{std::move(question), std::move(answer)};
           }),
           py::arg("question_text"), py::arg("answer_text"))
      .def_readwrite("question_text", &RenderedPair::question_text)
      .def_readwrite("answer_text", &RenderedPair::answer_text);

  py::class_<PromptTemplate>(m, "PromptTemplate")
      .def(py::init<>())
      .def_readwrite("name", &PromptTemplate::name)
      .def_readwrite("with_input", &PromptTemplate::with_input)
      .def_readwrite("without_input", &PromptTemplate::without_input)
      .def("validate", &PromptTemplate::validate);

  m.def("load_dataset", [](const std::filesystem::path& path) {
    Dataset ds = load_dataset(path);
    std::vector<std::pair<std::size_t, std::string>> rejected;
    for (const RejectedSample& r : ds.rejected) {
      rejected.emplace_back(r.index, r.reason);
    }
    return std::make_pair(ds.samples, rejected);
  });
  m.def("save_dataset", &save_dataset);
  m.def("render", &render);
  m.def("builtin_template", [](const std::string& name) {
    return get_template(builtin_templates(), name);
  });

  // ---- scorer ----------------------------------------------------------------
  m.def("tokenize", [](const std::string& text) { return tokenize(text); });

  py::class_<TokenLogProbs>(m, "TokenLogProbs")
      .def_readonly("tokens", &TokenLogProbs::tokens)
      .def_readonly("logprobs", &TokenLogProbs::logprobs)
      .def("sum", &TokenLogProbs::sum);

  py::class_<NGramScorer>(m, "NGramScorer")
      .def_static(
          "fit",
          [](const std::vector<std::pair<std::string, std::string>>& corpus,
             int order, double smoothing) {
            std::vector<RenderedPair> pairs;
            pairs.reserve(corpus.size());
            for (const auto& [q, a] : corpus) pairs.push_back({q, a});
            return NGramScorer::fit(pairs, order, smoothing);
          },
          py::arg("corpus"), py::arg("order") = NGramScorer::kDefaultOrder,
          py::arg("smoothing") = NGramScorer::kDefaultSmoothing)
      .def_static("untrained", &NGramScorer::untrained,
                  py::arg("order") = NGramScorer::kDefaultOrder,
                  py::arg("smoothing") = NGramScorer::kDefaultSmoothing)
      .def_static("load_snapshot", &NGramScorer::load_snapshot)
      .def("save_snapshot", &NGramScorer::save_snapshot)
      .def_property_readonly("fingerprint", &NGramScorer::fingerprint)
      .def_property_readonly("order", &NGramScorer::order)
      .def_property_readonly("smoothing", &NGramScorer::smoothing)
      .def_property_readonly("vocab_size", &NGramScorer::vocab_size)
      .def("score_continuation", &NGramScorer::score_continuation,
           py::arg("context"), py::arg("continuation"))
      .def("transition_prob", &NGramScorer::transition_prob,
           py::arg("context"), py::arg("token"));

  py::class_<HashedBagEmbedder>(m, "HashedBagEmbedder")
      .def(py::init<std::size_t>(),
           py::arg("dim") = HashedBagEmbedder::kDefaultDim)
      .def_property_readonly("fingerprint", &HashedBagEmbedder::fingerprint)
      .def_property_readonly("dim", &HashedBagEmbedder::dim)
      .def("embed", [](const HashedBagEmbedder& e, const std::string& text) {
        return e.embed(text).values;
      });

  // ---- ifd --------------------------------------------------------------------
  py::class_<ScoreRecord>(m, "ScoreRecord")
      .def(py::init<>())
      .def(py::init([](std::string sample_id, double da, double ca, double ifd,
                       std::int64_t n_answer_tokens, std::string fingerprint,
                       bool da_floor_applied) {
             ScoreRecord r;
             r.sample_id = std::move(sample_id);
             r.da = da;
             r.ca = ca;
             r.ifd = ifd;
             r.n_answer_tokens = n_answer_tokens;
             r.scorer_fingerprint = std::move(fingerprint);
             r.da_floor_applied = da_floor_applied;
             return r;
           }),
           py::arg("sample_id"), py::arg("da"), py::arg("ca"), py::arg("ifd"),
           py::arg("n_answer_tokens") = 1, py::arg("scorer_fingerprint") = "",
           py::arg("da_floor_applied") = false)
      .def_readwrite("sample_id", &ScoreRecord::sample_id)
      .def_readwrite("da", &ScoreRecord::da)
      .def_readwrite("ca", &ScoreRecord::ca)
      .def_readwrite("ifd", &ScoreRecord::ifd)
      .def_readwrite("n_answer_tokens", &ScoreRecord::n_answer_tokens)
      .def_readwrite("scorer_fingerprint", &ScoreRecord::scorer_fingerprint)
      .def_readwrite("da_floor_applied", &ScoreRecord::da_floor_applied);

  m.def(
      "conditioned_answer_score",
      [](const NGramScorer& scorer, const std::string& question,
         const std::string& answer) {
        AnswerScore s = conditioned_answer_score(scorer, {question, answer});
        return std::make_pair(s.value, s.token_count);
      },
      py::arg("scorer"), py::arg("question_text"), py::arg("answer_text"));
  m.def(
      "direct_answer_score",
      [](const NGramScorer& scorer, const std::string& question,
         const std::string& answer) {
        AnswerScore s = direct_answer_score(scorer, {question, answer});
        return std::make_pair(s.value, s.token_count);
      },
      py::arg("scorer"), py::arg("question_text"), py::arg("answer_text"));
  m.def("ifd_ratio", [](double ca, double da) {
    IfdValue v = ifd_ratio(ca, da);
    return std::make_pair(v.value, v.floor_applied);
  });
  m.def(
      "score_dataset",
      [](const NGramScorer& scorer, const std::vector<Sample>& samples,
         const PromptTemplate& tmpl, const std::filesystem::path& cache,
         int parallelism) {
        ScoreOptions options;
        options.parallelism = parallelism;
        return score_dataset(scorer, samples, tmpl, cache, options);
      },
      py::arg("scorer"), py::arg("samples"), py::arg("template"),
      py::arg("cache_path"), py::arg("parallelism") = 1);
  m.def("filter_misaligned", [](const std::vector<ScoreRecord>& records) {
    FilterResult r = filter_misaligned(records);
    return std::make_pair(r.kept, r.dropped);
  });
  m.def(
      "select",
      [](const std::vector<ScoreRecord>& records, const std::string& strategy,
         double fraction, std::size_t dataset_size, std::uint64_t seed,
         int clusters, const std::optional<std::vector<std::string>>& ids,
         const std::optional<std::vector<std::vector<double>>>& embeddings) {
        SelectionStrategy s = SelectionStrategy::parse(strategy);
        s.seed = seed;
        s.clusters = clusters;
        if (ids.has_value() != embeddings.has_value()) {
          throw_config("ids and embeddings must be provided together");
        }
        if (ids.has_value()) {
          EmbeddingSet set = embedding_set_from(*ids, *embeddings);
          SelectionResult r = select(records, s, fraction, dataset_size, &set);
          return std::make_tuple(r.ids, r.target, r.shortfall);
        }
        SelectionResult r = select(records, s, fraction, dataset_size);
        return std::make_tuple(r.ids, r.target, r.shortfall);
      },
      py::arg("records"), py::arg("strategy"), py::arg("fraction"),
      py::arg("dataset_size"), py::arg("seed") = 0, py::arg("clusters") = 100,
      py::arg("ids") = std::nullopt, py::arg("embeddings") = std::nullopt);

  // ---- diversity ----------------------------------------------------------------
  m.def(
      "kmeans",
      [](const std::vector<std::string>& ids,
         const std::vector<std::vector<double>>& rows, int k,
         std::uint64_t seed, int max_iters) {
        ClusterAssignment a = kmeans(embedding_set_from(ids, rows), k, seed,
                                     max_iters);
        py::dict out;
        out["k"] = a.k;
        out["seed"] = a.seed;
        out["labels"] = a.labels;
        out["inertia"] = a.inertia;
        out["inertia_trace"] = a.inertia_trace;
        return out;
      },
      py::arg("ids"), py::arg("embeddings"), py::arg("k"), py::arg("seed"),
      py::arg("max_iters") = 100);

  // ---- eval -----------------------------------------------------------------------
  py::enum_<OrderResult>(m, "OrderResult")
      .value("WIN", OrderResult::win)
      .value("TIE", OrderResult::tie)
      .value("LOSE", OrderResult::lose);
  py::enum_<ComparisonOutcome>(m, "ComparisonOutcome")
      .value("WIN", ComparisonOutcome::win)
      .value("TIE", ComparisonOutcome::tie)
      .value("LOSE", ComparisonOutcome::lose);

  m.def(
      "build_judge_prompt",
      [](const std::string& question, const std::string& answer_first,
         const std::string& answer_second) {
        JudgePrompt p = build_judge_prompt(question, answer_first, answer_second);
        return std::make_pair(p.system_text, p.user_text);
      },
      py::arg("question"), py::arg("answer_first"), py::arg("answer_second"));
  m.def("parse_judge_reply", [](const std::string& text) {
    JudgeScorePair p = parse_judge_reply(text);
    return std::make_pair(p.score_first, p.score_second);
  });
  m.def(
      "per_order_result",
      [](double score_first, double score_second, bool candidate_first) {
        return per_order_result({score_first, score_second}, candidate_first);
      },
      py::arg("score_first"), py::arg("score_second"),
      py::arg("candidate_first"));
  m.def("adjudicate", &adjudicate);
  m.def("winning_score", &winning_score, py::arg("wins"), py::arg("losses"),
        py::arg("total"));
  m.def("majority_outcome", &majority_outcome);
  m.def("tally_majority",
        [](const std::vector<std::array<ComparisonOutcome, 3>>& votes) {
          EvalTally t = tally_majority(votes);
          return std::make_tuple(t.wins, t.ties, t.losses, t.score());
        });

  // ---- analysis ----------------------------------------------------------------------
  py::class_<ScoreStats>(m, "ScoreStats")
      .def_readonly("count", &ScoreStats::count)
      .def_readonly("mean", &ScoreStats::mean)
      .def_readonly("stdev", &ScoreStats::stdev)
      .def_readonly("min", &ScoreStats::min)
      .def_readonly("max", &ScoreStats::max)
      .def_readonly("p5", &ScoreStats::p5)
      .def_readonly("p25", &ScoreStats::p25)
      .def_readonly("p50", &ScoreStats::p50)
      .def_readonly("p75", &ScoreStats::p75)
      .def_readonly("p95", &ScoreStats::p95)
      .def_readonly("fraction_above_1", &ScoreStats::fraction_above_1);
  m.def("compute_stats", &compute_stats);
  m.def("pca_project",
        [](const std::vector<std::string>& ids,
           const std::vector<std::vector<double>>& rows) {
          PcaResult r = pca_project(embedding_set_from(ids, rows));
          return r.points;
        });

  // ---- pipeline -------------------------------------------------------------------------
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& config_path, bool resume_run,
         bool verbose) {
        PipelineConfig config = load_config(config_path);
        RunManifest manifest = resume_run ? resume(config, verbose)
                                          : run_pipeline(config, verbose);
        py::dict out;
        out["loaded"] = manifest.loaded;
        out["rejected"] = manifest.rejected;
        out["pre_experience"] = manifest.pre_experience;
        out["filtered"] = manifest.filtered;
        out["selected"] = manifest.selected;
        out["shortfall"] = manifest.shortfall;
        out["theta0_fingerprint"] = manifest.theta0_fingerprint;
        out["theta_fingerprint"] = manifest.theta_fingerprint;
        out["tool_version"] = manifest.tool_version;
        return out;
      },
      py::arg("config_path"), py::arg("resume") = false,
      py::arg("verbose") = false);
}
