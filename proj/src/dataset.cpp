#include "cherry/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string positional_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

// Fills template slots in a single pass so that braces appearing inside
// sample text are never re-expanded.
std::string fill_slots(std::string_view tmpl, std::string_view instruction,
                 std::string_view input) {
  static constexpr std::string_view kInstructionSlot = "{instruction}";
  static constexpr std::string_view kInputSlot = "{input}";
  std::string out;
  out.reserve(tmpl.size() + instruction.size() + input.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    std::size_t brace = tmpl.find('{', pos);
    if (brace == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, brace - pos));
    if (tmpl.compare(brace, kInstructionSlot.size(), kInstructionSlot) == 0) {
      out.append(instruction);
      pos = brace + kInstructionSlot.size();
    } else if (tmpl.compare(brace, kInputSlot.size(), kInputSlot) == 0) {
      out.append(input);
      pos = brace + kInputSlot.size();
    } else {
      out.push_back('{');
      pos = brace + 1;
    }
  }
  return out;
}

ordered_json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  try {
    return ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    // nlohmann reports the byte offset in e.byte; surface it verbatim.
    throw_data("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

bool Sample::has_input() const { return !is_blank(input); }

void PromptTemplate::validate() const {
  const auto needs = [&](const std::string& body, std::string_view slot,
                         const char* variant) {
    if (body.find(slot) == std::string::npos) {
      throw_config("template '" + name + "': " + variant +
                   " variant is missing the " + std::string(slot) + " slot");
    }
  };
  needs(with_input, "{instruction}", "with_input");
  needs(with_input, "{input}", "with_input");
  needs(without_input, "{instruction}", "without_input");
}

Dataset load_dataset(const std::filesystem::path& path) {
  ordered_json doc = parse_json_file(path);
  if (!doc.is_array()) {
    throw_data(path.string() + ": expected a top-level JSON array of samples");
  }

  Dataset out;
  out.samples.reserve(doc.size());
  std::set<std::string> seen_ids;

  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& item = doc[i];
    const auto reject = [&](const char* reason) {
      out.rejected.push_back({i, reason});
    };
    if (!item.is_object()) {
      reject("entry is not an object");
      continue;
    }

    Sample s;
    if (auto it = item.find("instruction");
        it == item.end() || !it->is_string()) {
      reject("missing or non-string instruction");
      continue;
    } else {
      s.instruction = it->get<std::string>();
    }
    if (auto it = item.find("output"); it == item.end() || !it->is_string()) {
      reject("missing or non-string output");
      continue;
    } else {
      s.output = it->get<std::string>();
    }
    if (auto it = item.find("input"); it != item.end()) {
      if (!it->is_string()) {
        reject("non-string input");
        continue;
      }
      s.input = it->get<std::string>();
    }
    if (is_blank(s.instruction)) {
      reject("blank instruction");
      continue;
    }
    if (is_blank(s.output)) {
      reject("blank output");
      continue;
    }
    if (auto it = item.find("id"); it != item.end()) {
      if (!it->is_string() || it->get<std::string>().empty()) {
        reject("invalid id");
        continue;
      }
      s.id = it->get<std::string>();
    } else {
      s.id = positional_id(i);
    }
    if (!seen_ids.insert(s.id).second) {
      throw_data(path.string() + ": duplicate sample id '" + s.id + "'");
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const std::vector<Sample>& samples,
                  const std::filesystem::path& path) {
  if (samples.empty()) {
    throw_data("refusing to save an empty dataset to " + path.string());
  }
  ordered_json arr = ordered_json::array();
  for (const Sample& s : samples) {
    ordered_json obj;
    obj["id"] = s.id;
    obj["instruction"] = s.instruction;
    obj["input"] = s.input;
    obj["output"] = s.output;
    arr.push_back(std::move(obj));
  }
  std::ofstream outf(path, std::ios::binary | std::ios::trunc);
  if (!outf) throw_data("cannot write " + path.string());
  outf << arr.dump(2) << '\n';
  if (!outf.good()) throw_data("short write to " + path.string());
}

RenderedPair render(const Sample& sample, const PromptTemplate& tmpl) {
  RenderedPair out;
  const std::string& body =
      sample.has_input() ? tmpl.with_input : tmpl.without_input;
  out.question_text = fill_slots(body, sample.instruction, sample.input);
  out.answer_text = sample.output;
  return out;
}

const TemplateMap& builtin_templates() {
  static const TemplateMap map = [] {
    TemplateMap m;
    PromptTemplate alpaca;
    alpaca.name = "alpaca";
    alpaca.with_input =
        "Below is an instruction that describes a task, paired with an input "
        "that provides further context. Write a response that appropriately "
        "completes the request.\n\n### Instruction:\n{instruction}\n\n### "
        "Input:\n{input}\n\n### Response:\n";
    alpaca.without_input =
        "Below is an instruction that describes a task. Write a response "
        "that appropriately completes the request.\n\n### "
        "Instruction:\n{instruction}\n\n### Response:\n";
    alpaca.validate();
    m.emplace(alpaca.name, std::move(alpaca));
    return m;
  }();
  return map;
}

TemplateMap load_templates(const std::filesystem::path& path) {
  ordered_json doc = parse_json_file(path);
  if (!doc.is_object() || !doc.contains("templates") ||
      !doc["templates"].is_object()) {
    throw_config(path.string() +
                 ": expected {\"version\": ..., \"templates\": {...}}");
  }
  TemplateMap out;
  for (const auto& [name, body] : doc["templates"].items()) {
    PromptTemplate t;
    t.name = name;
    if (!body.is_object() || !body.contains("with_input") ||
        !body.contains("without_input") || !body["with_input"].is_string() ||
        !body["without_input"].is_string()) {
      throw_config(path.string() + ": template '" + name +
                   "' must define string with_input/without_input");
    }
    t.with_input = body["with_input"].get<std::string>();
    t.without_input = body["without_input"].get<std::string>();
    t.validate();
    out.emplace(name, std::move(t));
  }
  return out;
}

const PromptTemplate& get_template(const TemplateMap& templates,
                                   const std::string& name) {
  auto it = templates.find(name);
  if (it == templates.end()) {
    std::string known;
    for (const auto& [k, _] : templates) {
      if (!known.empty()) known += ", ";
      known += k;
    }
    throw_config("unknown template '" + name + "' (available: " + known + ")");
  }
  return it->second;
}

}  // namespace cherry
