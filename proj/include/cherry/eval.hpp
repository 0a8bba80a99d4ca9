#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cherry {

// Prompt pair sent to a grading model.  The user body carries the question
// and both candidate answers plus rating instructions; slots are {question},
// {answer_1}, {answer_2}.
struct JudgePromptTemplate {
  std::string system_template;
  std::string user_template;

  // Compiled-in template, mirrored byte-for-byte by
  // resources/judge_prompt.json (a unit test keeps them in sync).
  static const JudgePromptTemplate& builtin();
  static JudgePromptTemplate load(const std::filesystem::path& path);
};

struct JudgePrompt {
  std::string system_text;
  std::string user_text;
};

JudgePrompt build_judge_prompt(std::string_view question,
                               std::string_view answer_first,
                               std::string_view answer_second,
                               const JudgePromptTemplate& tmpl =
                                   JudgePromptTemplate::builtin());

// The two scores on the first non-blank line of a judge reply, in the order
// the answers were presented.
struct JudgeScorePair {
  double score_first = 0.0;
  double score_second = 0.0;
};

// Strict parse: the first non-blank line must consist of exactly two reals
// separated by whitespace, each within [1, 10].  Anything else is a data
// error carrying the offending line.
JudgeScorePair parse_judge_reply(std::string_view reply);

// Result of one judged ordering from the candidate's point of view.
enum class OrderResult { win, tie, lose };

// Final verdict for a comparison, after both orderings.
enum class ComparisonOutcome { win, tie, lose };

// Maps one score pair to the candidate's result.  `candidate_first` says
// whether the candidate was presented as assistant 1 in this ordering.
OrderResult per_order_result(const JudgeScorePair& scores,
                             bool candidate_first);

// Combines both orderings: a verdict must survive the position swap.
//   win + (win|tie)  -> win         lose + (lose|tie) -> lose
//   win + lose       -> tie         tie  + tie        -> tie
ComparisonOutcome adjudicate(OrderResult first_order, OrderResult second_order);

// (wins - losses) / total + 1, mapping onto [0, 2] with 1 as parity.
double winning_score(std::int64_t wins, std::int64_t losses,
                     std::int64_t total);

struct EvalTally {
  std::int64_t wins = 0;
  std::int64_t ties = 0;
  std::int64_t losses = 0;

  std::int64_t total() const { return wins + ties + losses; }
  double score() const { return winning_score(wins, losses, total()); }
  void add(ComparisonOutcome outcome);
};

// Majority vote over three independent verdicts; a three-way split is a tie.
ComparisonOutcome majority_outcome(const std::array<ComparisonOutcome, 3>& votes);
EvalTally tally_majority(
    const std::vector<std::array<ComparisonOutcome, 3>>& votes);

// ---- file-based comparison harness ----------------------------------------

// One head-to-head item.  `answer_a` is the candidate under test.
struct ComparisonItem {
  std::string item_id;
  std::string test_set;  // grouping key for the report; may be empty
  std::string question;
  std::string answer_a;
  std::string answer_b;
};

std::vector<ComparisonItem> read_comparison_items(
    const std::filesystem::path& path);

// Writes two JSONL request lines per item (candidate first, then swapped):
// {item_id, order, system, user}.
void write_judge_requests(const std::vector<ComparisonItem>& items,
                          const JudgePromptTemplate& tmpl,
                          const std::filesystem::path& path);

// Reply lines: {item_id, order, text}.  Later lines override earlier ones.
std::map<std::pair<std::string, int>, std::string> read_judge_replies(
    const std::filesystem::path& path);

struct EvalReport {
  std::map<std::string, EvalTally> per_test_set;
  std::int64_t judged = 0;
  std::int64_t invalid = 0;  // items dropped: missing or unparseable replies
};

EvalReport adjudicate_batch(
    const std::vector<ComparisonItem>& items,
    const std::map<std::pair<std::string, int>, std::string>& replies);

// Human vote file: JSONL {item_id, test_set?, votes: [v1, v2, v3]} with each
// vote one of "win"/"tie"/"lose" for the candidate.
EvalReport tally_human_votes(const std::filesystem::path& path);

void write_eval_report(const EvalReport& report,
                       const std::filesystem::path& path);

}  // namespace cherry
