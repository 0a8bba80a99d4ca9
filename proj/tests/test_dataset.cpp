#include "doctest.h"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cherry/dataset.hpp"
#include "cherry/errors.hpp"
#include "cherry/util.hpp"

using namespace cherry;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir =
      fs::temp_directory_path() /
      ("cherry_dataset_test_" + std::to_string(::getpid()) + "_" +
       std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

fs::path write_file(const fs::path& dir, const std::string& name,
                    const std::string& body) {
  fs::path p = dir / name;
  std::ofstream out(p, std::ios::binary);
  out << body;
  return p;
}

// Deterministic random sample generator for round-trip testing.
std::vector<Sample> random_samples(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  const char* words[] = {"alpha", "beta",  "gamma", "delta",
                         "curve", "prime", "sort",  "graph"};
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.instruction = std::string(words[rng.index(8)]) + " " +
                    words[rng.index(8)] + " " + std::to_string(rng.index(100));
    s.input = (rng.index(2) == 0)
                  ? ""
                  : std::string(words[rng.index(8)]) + " ctx";
    s.output = std::string(words[rng.index(8)]) + " answer " +
               std::to_string(rng.index(1000));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("load_dataset reads valid records in order") {
  fs::path dir = temp_dir();
  fs::path p = write_file(dir, "d.json", R"([
    {"instruction": "Add 2+2", "input": "", "output": "4"},
    {"instruction": "Name a color", "input": "bright", "output": "red"}
  ])");
  Dataset ds = load_dataset(p);
  REQUIRE(ds.samples.size() == 2);
  CHECK(ds.rejected.empty());
  CHECK(ds.samples[0].id == "000000");
  CHECK(ds.samples[0].instruction == "Add 2+2");
  CHECK_FALSE(ds.samples[0].has_input());
  CHECK(ds.samples[1].id == "000001");
  CHECK(ds.samples[1].input == "bright");
  CHECK(ds.samples[1].has_input());
}

TEST_CASE("load_dataset rejects bad records with diagnostics") {
  fs::path dir = temp_dir();
  fs::path p = write_file(dir, "d.json", R"([
    {"instruction": "ok", "output": ""},
    {"instruction": "ok", "output": "fine"},
    {"output": "orphan"},
    {"instruction": "   ", "output": "x"},
    {"instruction": "i", "input": 5, "output": "x"},
    "not an object"
  ])");
  Dataset ds = load_dataset(p);
  REQUIRE(ds.samples.size() == 1);
  CHECK(ds.samples[0].output == "fine");
  // Positional id reflects the array slot, not the surviving count.
  CHECK(ds.samples[0].id == "000001");
  REQUIRE(ds.rejected.size() == 5);
  CHECK(ds.rejected[0].index == 0);
  CHECK(ds.rejected[0].reason == "blank output");
  CHECK(ds.rejected[1].index == 2);
  CHECK(ds.rejected[2].index == 3);
  CHECK(ds.rejected[3].index == 4);
  CHECK(ds.rejected[4].index == 5);
}

TEST_CASE("load_dataset hard-fails on malformed input") {
  fs::path dir = temp_dir();
  CHECK_THROWS_AS(load_dataset(dir / "missing.json"), Error);
  CHECK_THROWS_AS(load_dataset(write_file(dir, "bad.json", "{not json")),
                  Error);
  CHECK_THROWS_AS(
      load_dataset(write_file(dir, "obj.json", R"({"instruction":"x"})")),
      Error);
  CHECK_THROWS_AS(
      load_dataset(write_file(
          dir, "dup.json",
          R"([{"id":"a","instruction":"x","output":"y"},
              {"id":"a","instruction":"p","output":"q"}])")),
      Error);
}

TEST_CASE("load_dataset honors explicit ids") {
  fs::path dir = temp_dir();
  fs::path p = write_file(
      dir, "d.json",
      R"([{"id":"zebra","instruction":"x","output":"y"}])");
  Dataset ds = load_dataset(p);
  REQUIRE(ds.samples.size() == 1);
  CHECK(ds.samples[0].id == "zebra");
}

TEST_CASE("save/load round-trip is field-identical") {
  fs::path dir = temp_dir();
  std::vector<Sample> original = random_samples(100, 20240811);
  fs::path p = dir / "round.json";
  save_dataset(original, p);
  Dataset back = load_dataset(p);
  REQUIRE(back.samples.size() == original.size());
  CHECK(back.rejected.empty());
  for (std::size_t i = 0; i < original.size(); ++i) {
    CHECK(back.samples[i].id == original[i].id);
    CHECK(back.samples[i].instruction == original[i].instruction);
    CHECK(back.samples[i].input == original[i].input);
    CHECK(back.samples[i].output == original[i].output);
  }
}

TEST_CASE("save_dataset rejects empty input and is byte-stable") {
  fs::path dir = temp_dir();
  CHECK_THROWS_AS(save_dataset({}, dir / "e.json"), Error);

  std::vector<Sample> samples = random_samples(5, 99);
  fs::path a = dir / "a.json";
  fs::path b = dir / "b.json";
  save_dataset(samples, a);
  save_dataset(samples, b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ba((std::istreambuf_iterator<char>(fa)), {});
  std::string bb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(ba == bb);
  CHECK_FALSE(ba.empty());
}

TEST_CASE("render substitutes literally and picks the right branch") {
  PromptTemplate t;
  t.name = "mini";
  t.with_input = "Q: {instruction} [{input}]\nA:";
  t.without_input = "Q: {instruction}\nA:";
  t.validate();

  Sample s;
  s.instruction = "Add 2+2";
  s.output = "4";

  RenderedPair no_input = render(s, t);
  CHECK(no_input.question_text == "Q: Add 2+2\nA:");
  CHECK(no_input.answer_text == "4");

  s.input = "x";
  RenderedPair with_input = render(s, t);
  CHECK(with_input.question_text == "Q: Add 2+2 [x]\nA:");

  s.input = "   ";  // whitespace-only input counts as absent
  CHECK(render(s, t).question_text == "Q: Add 2+2\nA:");
}

TEST_CASE("render does not re-expand braces inside sample text") {
  PromptTemplate t;
  t.name = "mini";
  t.with_input = "{instruction}|{input}";
  t.without_input = "{instruction}";
  Sample s;
  s.instruction = "use {input} literally";
  s.input = "ctx";
  s.output = "o";
  CHECK(render(s, t).question_text == "use {input} literally|ctx");
}

TEST_CASE("render keeps instruction verbatim as substring") {
  const PromptTemplate& t = get_template(builtin_templates(), "alpaca");
  Sample s;
  s.instruction = "Summarize the plot of 'Hamlet' in one sentence.";
  s.input = "focus on the prince";
  s.output = "A prince avenges his father.";
  RenderedPair r = render(s, t);
  CHECK(r.question_text.find(s.instruction) != std::string::npos);
  CHECK(r.question_text.find(s.input) != std::string::npos);
  CHECK(r.answer_text == s.output);
}

TEST_CASE("template validation flags missing slots") {
  PromptTemplate bad;
  bad.name = "broken";
  bad.with_input = "only {instruction}";  // missing {input}
  bad.without_input = "fine {instruction}";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.with_input = "{instruction} {input}";
  bad.without_input = "no slot";
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("builtin templates match the resource file") {
  TemplateMap from_file =
      load_templates(fs::path(CHERRY_RESOURCE_DIR) / "templates.json");
  const TemplateMap& builtin = builtin_templates();
  REQUIRE(from_file.size() == builtin.size());
  for (const auto& [name, tmpl] : builtin) {
    auto it = from_file.find(name);
    REQUIRE(it != from_file.end());
    CHECK(it->second.with_input == tmpl.with_input);
    CHECK(it->second.without_input == tmpl.without_input);
  }
}

TEST_CASE("get_template reports unknown names") {
  CHECK_THROWS_WITH_AS(get_template(builtin_templates(), "nope"),
                       doctest::Contains("nope"), Error);
}
