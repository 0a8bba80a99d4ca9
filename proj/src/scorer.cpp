#include "cherry/scorer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/tokenize.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

// Sliding context window of the order-1 most recent tokens, pre-filled with
// <bos>.  Keys join tokens with one space; tokens never contain whitespace.
class Window {
 public:
  explicit Window(int order) : width_(static_cast<std::size_t>(order - 1)) {
    tokens_.assign(width_, std::string(kBosToken));
  }
  void push(const std::string& token) {
    if (width_ == 0) return;
    tokens_.erase(tokens_.begin());
    tokens_.push_back(token);
  }
  std::string key() const { return join(tokens_, " "); }

 private:
  std::size_t width_;
  std::vector<std::string> tokens_;
};

void check_params(int order, double smoothing) {
  if (order < 1) throw_config("n-gram order must be >= 1");
  if (!(smoothing > 0.0) || !std::isfinite(smoothing)) {
    throw_config("smoothing constant must be a finite positive number");
  }
}

}  // namespace

double TokenLogProbs::sum() const {
  return std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
}

NGramScorer::NGramScorer(int order, double smoothing)
    : order_(order), smoothing_(smoothing) {
  check_params(order, smoothing);
  vocab_.insert(std::string(kBosToken));
  vocab_.insert(std::string(kUnkToken));
}

NGramScorer NGramScorer::fit(const std::vector<RenderedPair>& corpus,
                             int order, double smoothing) {
  if (corpus.empty()) throw_config("cannot fit an n-gram model on an empty corpus");
  NGramScorer model(order, smoothing);
  for (const RenderedPair& pair : corpus) {
    std::vector<std::string> seq = tokenize(pair.question_text);
    std::vector<std::string> answer = tokenize(pair.answer_text);
    seq.insert(seq.end(), answer.begin(), answer.end());
    for (const std::string& tok : seq) model.vocab_.insert(tok);
    model.ingest(seq);
  }
  model.rebuild_fingerprint();
  return model;
}

NGramScorer NGramScorer::untrained(int order, double smoothing) {
  NGramScorer model(order, smoothing);
  model.rebuild_fingerprint();
  return model;
}

NGramScorer NGramScorer::with_vocab(const std::vector<std::string>& vocab,
                                    int order, double smoothing) {
  NGramScorer model(order, smoothing);
  model.vocab_.insert(vocab.begin(), vocab.end());
  model.rebuild_fingerprint();
  return model;
}

void NGramScorer::ingest(const std::vector<std::string>& sequence) {
  Window window(order_);
  for (const std::string& tok : sequence) {
    std::string key = window.key();
    transitions_[key][tok] += 1;
    context_totals_[key] += 1;
    window.push(tok);
  }
}

std::string NGramScorer::mapped(const std::string& token) const {
  return vocab_.count(token) ? token : std::string(kUnkToken);
}

double NGramScorer::transition_prob(const std::vector<std::string>& context,
                                    const std::string& token) const {
  Window window(order_);
  std::size_t width = static_cast<std::size_t>(order_ - 1);
  std::size_t skip = context.size() > width ? context.size() - width : 0;
  for (std::size_t i = skip; i < context.size(); ++i) {
    window.push(mapped(context[i]));
  }

  const double v = static_cast<double>(vocab_.size());
  double num = smoothing_;
  double den = smoothing_ * v;
  auto it = transitions_.find(window.key());
  if (it != transitions_.end()) {
    den += static_cast<double>(context_totals_.at(it->first));
    auto jt = it->second.find(mapped(token));
    if (jt != it->second.end()) num += static_cast<double>(jt->second);
  }
  return num / den;
}

TokenLogProbs NGramScorer::score_continuation(
    std::string_view context, std::string_view continuation) const {
  std::vector<std::string> ctx = tokenize(context);
  std::vector<std::string> cont = tokenize(continuation);
  if (cont.empty()) {
    throw_data("continuation has no tokens after tokenization");
  }

  TokenLogProbs out;
  out.tokens = cont;
  out.logprobs.reserve(cont.size());

  const double v = static_cast<double>(vocab_.size());
  Window window(order_);
  for (const std::string& tok : ctx) window.push(mapped(tok));
  for (const std::string& raw : cont) {
    std::string tok = mapped(raw);
    double num = smoothing_;
    double den = smoothing_ * v;
    auto it = transitions_.find(window.key());
    if (it != transitions_.end()) {
      den += static_cast<double>(context_totals_.at(it->first));
      auto jt = it->second.find(tok);
      if (jt != it->second.end()) num += static_cast<double>(jt->second);
    }
    out.logprobs.push_back(std::log(num / den));
    window.push(tok);
  }
  return out;
}

void NGramScorer::rebuild_fingerprint() {
  // Canonical dump: parameters, sorted vocab, sorted transition table.
  // std::map iteration is already sorted, so this is deterministic.
  std::uint64_t h = kFnvOffset;
  const auto feed = [&](std::string_view part) {
    h = fnv1a64(part, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  };
  feed("ngram.v1");
  feed(std::to_string(order_));
  feed(format_double(smoothing_));
  for (const std::string& tok : vocab_) feed(tok);
  feed("\x1e");
  for (const auto& [ctx, row] : transitions_) {
    feed(ctx);
    for (const auto& [tok, count] : row) {
      feed(tok);
      feed(std::to_string(count));
    }
    feed("\x1e");
  }
  fingerprint_ = "ngram:v1:n=" + std::to_string(order_) +
                 ":k=" + format_double(smoothing_) +
                 ":V=" + std::to_string(vocab_.size()) + ":" + to_hex16(h);
}

void NGramScorer::save_snapshot(const std::filesystem::path& path) const {
  ordered_json doc;
  doc["schema_version"] = 1;
  doc["kind"] = "ngram";
  doc["order"] = order_;
  doc["smoothing"] = smoothing_;
  doc["vocab"] = vocab_;
  ordered_json table = ordered_json::object();
  for (const auto& [ctx, row] : transitions_) {
    ordered_json counts = ordered_json::object();
    for (const auto& [tok, count] : row) counts[tok] = count;
    table[ctx] = std::move(counts);
  }
  doc["transitions"] = std::move(table);
  doc["fingerprint"] = fingerprint_;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out.good()) throw_data("short write to " + path.string());
}

NGramScorer NGramScorer::load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw_data("malformed scorer snapshot " + path.string() + ": " + e.what());
  }
  try {
    if (doc.at("kind").get<std::string>() != "ngram") {
      throw_data(path.string() + ": not an n-gram scorer snapshot");
    }
    NGramScorer model(doc.at("order").get<int>(),
                      doc.at("smoothing").get<double>());
    for (const auto& tok : doc.at("vocab")) {
      model.vocab_.insert(tok.get<std::string>());
    }
    for (const auto& [ctx, row] : doc.at("transitions").items()) {
      for (const auto& [tok, count] : row.items()) {
        std::uint64_t n = count.get<std::uint64_t>();
        model.transitions_[ctx][tok] = n;
        model.context_totals_[ctx] += n;
      }
    }
    model.rebuild_fingerprint();
    if (model.fingerprint_ != doc.at("fingerprint").get<std::string>()) {
      throw_data("scorer snapshot " + path.string() +
                 " failed its integrity check (fingerprint mismatch)");
    }
    return model;
  } catch (const ordered_json::exception& e) {
    throw_data("invalid scorer snapshot " + path.string() + ": " + e.what());
  }
}

HashedBagEmbedder::HashedBagEmbedder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw_config("embedding dimension must be >= 1");
  fingerprint_ = "hashbag:v1:d=" + std::to_string(dim);
}

std::size_t HashedBagEmbedder::bucket(std::string_view token,
                                      std::size_t dim) {
  return static_cast<std::size_t>(fnv1a64(token) %
                                  static_cast<std::uint64_t>(dim));
}

EmbeddingVector HashedBagEmbedder::embed(std::string_view text) const {
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) {
    throw_data("cannot embed text with no tokens");
  }
  EmbeddingVector out;
  out.values.assign(dim_, 0.0);
  for (const std::string& tok : tokens) {
    out.values[bucket(tok, dim_)] += 1.0;
  }
  double sq = 0.0;
  for (double v : out.values) sq += v * v;
  double norm = std::sqrt(sq);
  for (double& v : out.values) v /= norm;
  return out;
}

}  // namespace cherry
