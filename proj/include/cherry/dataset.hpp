#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cherry {

// One instruction-tuning triplet.  `input` is optional context (empty means
// the instruction stands alone).
struct Sample {
  std::string id;
  std::string instruction;
  std::string input;
  std::string output;

  bool has_input() const;  // non-empty after whitespace trimming
};

// A sample rendered into the (question, answer) form used for scoring.
struct RenderedPair {
  std::string question_text;  // full prompt up to and excluding the answer
  std::string answer_text;
};

// Prompt template with {instruction} / {input} slots.  `with_input` is used
// when the sample carries a non-blank input, `without_input` otherwise.
struct PromptTemplate {
  std::string name;
  std::string with_input;     // must reference {instruction} and {input}
  std::string without_input;  // must reference {instruction}

  void validate() const;  // throws config error on missing slots
};

struct RejectedSample {
  std::size_t index;   // position in the source array
  std::string reason;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<RejectedSample> rejected;
};

// Loads a JSON array of {instruction, input?, output} objects.
//  - absent/blank instruction or output: record rejected, keep going
//  - absent `id`: assigned as zero-padded position ("000000", "000001", ...)
//  - duplicate ids or malformed JSON: hard data error
Dataset load_dataset(const std::filesystem::path& path);

// Writes samples as a JSON array with stable key order
// (id, instruction, input, output).  Byte-identical across runs.
void save_dataset(const std::vector<Sample>& samples,
                  const std::filesystem::path& path);

RenderedPair render(const Sample& sample, const PromptTemplate& tmpl);

using TemplateMap = std::map<std::string, PromptTemplate>;

// Compiled-in templates; mirrors resources/templates.json (a unit test keeps
// the two in sync).
const TemplateMap& builtin_templates();

// Loads a template resource file: {"version": 1, "templates": {name: {...}}}.
TemplateMap load_templates(const std::filesystem::path& path);

// Lookup helper; throws config error naming the unknown template.
const PromptTemplate& get_template(const TemplateMap& templates,
                                   const std::string& name);

}  // namespace cherry
