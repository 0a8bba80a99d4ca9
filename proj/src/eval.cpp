#include "cherry/eval.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

// The grading prompt, kept byte-for-byte as published (including the
// duplicated "Assistant 2" block labels).  resources/judge_prompt.json must
// stay in sync; a unit test compares the two.
constexpr std::string_view kJudgeSystem =
    "You are a helpful and precise assistant for checking the quality of the "
    "answer.";

constexpr std::string_view kJudgeUser =
    "[Question]\n"
    "{question}\n"
    "[The Start of Assistant 2's Answer]\n"
    "{answer_1}\n"
    "[The End of Assistant 2's Answer]\n"
    "[The Start of Assistant 2's Answer]\n"
    "{answer_2}\n"
    "[The End of Assistant 2's Answer]\n"
    "\n"
    "We would like to request your feedback on the performance of two AI "
    "assistants in response to the user question displayed above.\n"
    "Please rate the helpfulness, relevance, accuracy, level of details of "
    "their responses. Each assistant receives an overall score on a scale of "
    "1 to 10, where a higher score indicates better overall performance.\n"
    "Please first output a single line containing only two values indicating "
    "the scores for Assistant 1 and 2, respectively. The two scores are "
    "separated by a space. In the subsequent line, please provide a "
    "comprehensive explanation of your evaluation, avoiding any potential "
    "bias and ensuring that the order in which the responses were presented "
    "does not affect your judgment.";

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
  };
  while (pos < line.size()) {
    while (pos < line.size() && is_space(line[pos])) ++pos;
    std::size_t start = pos;
    while (pos < line.size() && !is_space(line[pos])) ++pos;
    if (pos > start) fields.push_back(line.substr(start, pos - start));
  }
  return fields;
}

ordered_json parse_jsonl_line(const std::string& line,
                              const std::filesystem::path& path,
                              std::size_t line_no) {
  try {
    return ordered_json::parse(line);
  } catch (const ordered_json::parse_error& e) {
    throw_data(path.string() + ":" + std::to_string(line_no) +
               ": malformed JSON line: " + e.what());
  }
}

}  // namespace

const JudgePromptTemplate& JudgePromptTemplate::builtin() {
  static const JudgePromptTemplate tmpl{std::string(kJudgeSystem),
                                        std::string(kJudgeUser)};
  return tmpl;
}

JudgePromptTemplate JudgePromptTemplate::load(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw_data("malformed judge template " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("system") || !doc.contains("user") ||
      !doc["system"].is_string() || !doc["user"].is_string()) {
    throw_data(path.string() + ": expected {\"system\": ..., \"user\": ...}");
  }
  JudgePromptTemplate out{doc["system"].get<std::string>(),
                          doc["user"].get<std::string>()};
  for (std::string_view slot : {"{question}", "{answer_1}", "{answer_2}"}) {
    if (out.user_template.find(slot) == std::string::npos) {
      throw_data(path.string() + ": user template is missing the " +
                 std::string(slot) + " slot");
    }
  }
  return out;
}

JudgePrompt build_judge_prompt(std::string_view question,
                               std::string_view answer_first,
                               std::string_view answer_second,
                               const JudgePromptTemplate& tmpl) {
  JudgePrompt out;
  out.system_text = tmpl.system_template;
  // Literal substitution, no trimming: the judged answers must arrive intact.
  std::string user = replace_all(tmpl.user_template, "{question}", question);
  user = replace_all(user, "{answer_1}", answer_first);
  out.user_text = replace_all(user, "{answer_2}", answer_second);
  return out;
}

JudgeScorePair parse_judge_reply(std::string_view reply) {
  for (std::string_view line : split_lines(reply)) {
    if (is_blank(line)) continue;
    std::vector<std::string_view> fields = split_fields(line);
    JudgeScorePair out;
    if (fields.size() != 2 || !parse_double(fields[0], out.score_first) ||
        !parse_double(fields[1], out.score_second)) {
      throw_data("judge reply line is not two scores: \"" + std::string(line) +
                 "\"");
    }
    for (double s : {out.score_first, out.score_second}) {
      if (!std::isfinite(s) || s < 1.0 || s > 10.0) {
        throw_data("judge score out of the 1-10 range: \"" +
                   std::string(line) + "\"");
      }
    }
    return out;
  }
  throw_data("judge reply has no non-empty line");
}

OrderResult per_order_result(const JudgeScorePair& scores,
                             bool candidate_first) {
  double candidate = candidate_first ? scores.score_first : scores.score_second;
  double other = candidate_first ? scores.score_second : scores.score_first;
  if (candidate > other) return OrderResult::win;
  if (candidate < other) return OrderResult::lose;
  return OrderResult::tie;
}

ComparisonOutcome adjudicate(OrderResult first_order,
                             OrderResult second_order) {
  // +1 per won ordering, -1 per lost one; the sign must survive the swap.
  int score = 0;
  for (OrderResult r : {first_order, second_order}) {
    if (r == OrderResult::win) ++score;
    if (r == OrderResult::lose) --score;
  }
  if (score > 0) return ComparisonOutcome::win;
  if (score < 0) return ComparisonOutcome::lose;
  return ComparisonOutcome::tie;
}

double winning_score(std::int64_t wins, std::int64_t losses,
                     std::int64_t total) {
  if (total <= 0) throw_data("winning score needs a positive total");
  return static_cast<double>(wins - losses) / static_cast<double>(total) + 1.0;
}

void EvalTally::add(ComparisonOutcome outcome) {
  switch (outcome) {
    case ComparisonOutcome::win: ++wins; break;
    case ComparisonOutcome::tie: ++ties; break;
    case ComparisonOutcome::lose: ++losses; break;
  }
}

ComparisonOutcome majority_outcome(
    const std::array<ComparisonOutcome, 3>& votes) {
  int wins = 0;
  int ties = 0;
  int losses = 0;
  for (ComparisonOutcome v : votes) {
    if (v == ComparisonOutcome::win) ++wins;
    if (v == ComparisonOutcome::tie) ++ties;
    if (v == ComparisonOutcome::lose) ++losses;
  }
  if (wins >= 2) return ComparisonOutcome::win;
  if (losses >= 2) return ComparisonOutcome::lose;
  if (ties >= 2) return ComparisonOutcome::tie;
  return ComparisonOutcome::tie;  // three-way split counts as a tie
}

EvalTally tally_majority(
    const std::vector<std::array<ComparisonOutcome, 3>>& votes) {
  EvalTally tally;
  for (const auto& triple : votes) tally.add(majority_outcome(triple));
  return tally;
}

std::vector<ComparisonItem> read_comparison_items(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  std::vector<ComparisonItem> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ordered_json doc = parse_jsonl_line(line, path, line_no);
    ComparisonItem item;
    const auto need = [&](const char* key, std::string& out) {
      auto it = doc.find(key);
      if (it == doc.end() || !it->is_string() ||
          it->get<std::string>().empty()) {
        throw_data(path.string() + ":" + std::to_string(line_no) +
                   ": missing or empty '" + key + "'");
      }
      out = it->get<std::string>();
    };
    need("item_id", item.item_id);
    need("question", item.question);
    need("answer_a", item.answer_a);
    need("answer_b", item.answer_b);
    if (auto it = doc.find("test_set"); it != doc.end()) {
      if (!it->is_string()) {
        throw_data(path.string() + ":" + std::to_string(line_no) +
                   ": test_set must be a string");
      }
      item.test_set = it->get<std::string>();
    }
    if (!seen.insert(item.item_id).second) {
      throw_data(path.string() + ": duplicate item_id '" + item.item_id + "'");
    }
    items.push_back(std::move(item));
  }
  return items;
}

void write_judge_requests(const std::vector<ComparisonItem>& items,
                          const JudgePromptTemplate& tmpl,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  for (const ComparisonItem& item : items) {
    // Order 1 presents the candidate first; order 2 swaps the positions.
    for (int order = 1; order <= 2; ++order) {
      JudgePrompt prompt =
          order == 1
              ? build_judge_prompt(item.question, item.answer_a, item.answer_b,
                                   tmpl)
              : build_judge_prompt(item.question, item.answer_b, item.answer_a,
                                   tmpl);
      ordered_json doc;
      doc["item_id"] = item.item_id;
      doc["order"] = order;
      doc["system"] = prompt.system_text;
      doc["user"] = prompt.user_text;
      out << doc.dump() << '\n';
    }
  }
  if (!out.good()) throw_data("short write to " + path.string());
}

std::map<std::pair<std::string, int>, std::string> read_judge_replies(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  std::map<std::pair<std::string, int>, std::string> replies;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ordered_json doc = parse_jsonl_line(line, path, line_no);
    auto id = doc.find("item_id");
    auto order = doc.find("order");
    auto text = doc.find("text");
    if (id == doc.end() || !id->is_string() || order == doc.end() ||
        !order->is_number_integer() || text == doc.end() ||
        !text->is_string()) {
      throw_data(path.string() + ":" + std::to_string(line_no) +
                 ": reply lines need string item_id, integer order, string text");
    }
    int o = order->get<int>();
    if (o != 1 && o != 2) {
      throw_data(path.string() + ":" + std::to_string(line_no) +
                 ": order must be 1 or 2");
    }
    replies.insert_or_assign({id->get<std::string>(), o},
                             text->get<std::string>());
  }
  return replies;
}

EvalReport adjudicate_batch(
    const std::vector<ComparisonItem>& items,
    const std::map<std::pair<std::string, int>, std::string>& replies) {
  EvalReport report;
  for (const ComparisonItem& item : items) {
    auto first = replies.find({item.item_id, 1});
    auto second = replies.find({item.item_id, 2});
    if (first == replies.end() || second == replies.end()) {
      ++report.invalid;
      continue;
    }
    JudgeScorePair p1;
    JudgeScorePair p2;
    try {
      p1 = parse_judge_reply(first->second);
      p2 = parse_judge_reply(second->second);
    } catch (const Error&) {
      ++report.invalid;
      continue;
    }
    OrderResult o1 = per_order_result(p1, /*candidate_first=*/true);
    OrderResult o2 = per_order_result(p2, /*candidate_first=*/false);
    report.per_test_set[item.test_set].add(adjudicate(o1, o2));
    ++report.judged;
  }
  return report;
}

EvalReport tally_human_votes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  EvalReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    ordered_json doc = parse_jsonl_line(line, path, line_no);
    auto votes = doc.find("votes");
    if (votes == doc.end() || !votes->is_array() || votes->size() != 3) {
      throw_data(path.string() + ":" + std::to_string(line_no) +
                 ": expected a votes array of exactly 3 entries");
    }
    std::array<ComparisonOutcome, 3> triple{};
    for (std::size_t i = 0; i < 3; ++i) {
      const auto& v = (*votes)[i];
      if (!v.is_string()) {
        throw_data(path.string() + ":" + std::to_string(line_no) +
                   ": votes must be strings");
      }
      std::string s = v.get<std::string>();
      if (s == "win") {
        triple[i] = ComparisonOutcome::win;
      } else if (s == "tie") {
        triple[i] = ComparisonOutcome::tie;
      } else if (s == "lose") {
        triple[i] = ComparisonOutcome::lose;
      } else {
        throw_data(path.string() + ":" + std::to_string(line_no) +
                   ": vote must be win, tie or lose (got '" + s + "')");
      }
    }
    std::string test_set;
    if (auto it = doc.find("test_set"); it != doc.end() && it->is_string()) {
      test_set = it->get<std::string>();
    }
    report.per_test_set[test_set].add(majority_outcome(triple));
    ++report.judged;
  }
  return report;
}

void write_eval_report(const EvalReport& report,
                       const std::filesystem::path& path) {
  ordered_json doc;
  doc["schema_version"] = 1;
  ordered_json sets = ordered_json::object();
  for (const auto& [name, tally] : report.per_test_set) {
    ordered_json t;
    t["wins"] = tally.wins;
    t["ties"] = tally.ties;
    t["losses"] = tally.losses;
    t["winning_score"] = tally.score();
    sets[name] = std::move(t);
  }
  doc["per_test_set"] = std::move(sets);
  doc["judged"] = report.judged;
  doc["invalid_count"] = report.invalid;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out.good()) throw_data("short write to " + path.string());
}

}  // namespace cherry
