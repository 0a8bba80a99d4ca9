#include "cherry/ifd.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <thread>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json record_to_json(const ScoreRecord& rec) {
  ordered_json line;
  line["sample_id"] = rec.sample_id;
  line["da"] = rec.da;
  line["ca"] = rec.ca;
  line["ifd"] = rec.ifd;
  line["n_answer_tokens"] = rec.n_answer_tokens;
  line["scorer_fingerprint"] = rec.scorer_fingerprint;
  ordered_json flags = ordered_json::array();
  if (rec.da_floor_applied) flags.push_back("da_floor");
  line["flags"] = std::move(flags);
  return line;
}

bool record_from_json(const ordered_json& line, ScoreRecord& rec) {
  if (!line.is_object()) return false;
  auto str = [&](const char* key, std::string& out) {
    auto it = line.find(key);
    if (it == line.end() || !it->is_string()) return false;
    out = it->get<std::string>();
    return true;
  };
  auto num = [&](const char* key, double& out) {
    auto it = line.find(key);
    if (it == line.end() || !it->is_number()) return false;
    out = it->get<double>();
    return true;
  };
  if (!str("sample_id", rec.sample_id)) return false;
  if (!num("da", rec.da) || !num("ca", rec.ca) || !num("ifd", rec.ifd)) {
    return false;
  }
  auto nt = line.find("n_answer_tokens");
  if (nt == line.end() || !nt->is_number_integer()) return false;
  rec.n_answer_tokens = nt->get<std::int64_t>();
  if (!str("scorer_fingerprint", rec.scorer_fingerprint)) return false;
  auto fl = line.find("flags");
  if (fl == line.end() || !fl->is_array()) return false;
  rec.da_floor_applied = false;
  for (const auto& f : *fl) {
    if (!f.is_string()) return false;
    if (f.get<std::string>() == "da_floor") rec.da_floor_applied = true;
  }
  return true;
}

}  // namespace

AnswerScore conditioned_answer_score(const Scorer& scorer,
                                     const RenderedPair& pair) {
  TokenLogProbs lp =
      scorer.score_continuation(pair.question_text, pair.answer_text);
  AnswerScore out;
  out.token_count = static_cast<std::int64_t>(lp.size());
  out.value = -lp.sum() / static_cast<double>(lp.size());
  return out;
}

AnswerScore direct_answer_score(const Scorer& scorer,
                                const RenderedPair& pair) {
  TokenLogProbs lp = scorer.score_continuation("", pair.answer_text);
  AnswerScore out;
  out.token_count = static_cast<std::int64_t>(lp.size());
  out.value = -lp.sum() / static_cast<double>(lp.size());
  return out;
}

IfdValue ifd_ratio(double ca, double da) {
  if (!std::isfinite(ca) || !std::isfinite(da)) {
    throw_data("non-finite answer scores (ca=" + format_double(ca) +
               ", da=" + format_double(da) + ")");
  }
  IfdValue out;
  out.floor_applied = da < kDenominatorFloor;
  out.value = ca / std::max(da, kDenominatorFloor);
  return out;
}

ScoreRecord score_sample(const Scorer& scorer, const Sample& sample,
                         const PromptTemplate& tmpl) {
  RenderedPair pair = render(sample, tmpl);
  AnswerScore ca = conditioned_answer_score(scorer, pair);
  AnswerScore da = direct_answer_score(scorer, pair);
  IfdValue ratio = ifd_ratio(ca.value, da.value);

  ScoreRecord rec;
  rec.sample_id = sample.id;
  rec.da = da.value;
  rec.ca = ca.value;
  rec.ifd = ratio.value;
  rec.n_answer_tokens = ca.token_count;
  rec.scorer_fingerprint = scorer.fingerprint();
  rec.da_floor_applied = ratio.floor_applied;
  return rec;
}

void append_score_cache(const std::filesystem::path& cache_path,
                        const std::vector<ScoreRecord>& records) {
  std::ofstream out(cache_path, std::ios::binary | std::ios::app);
  if (!out) throw_data("cannot append to " + cache_path.string());
  for (const ScoreRecord& rec : records) {
    out << record_to_json(rec).dump() << '\n';
  }
  out.flush();
  if (!out.good()) throw_data("short write to " + cache_path.string());
}

std::vector<ScoreRecord> read_score_cache(const std::filesystem::path& cache_path,
                                          std::size_t* corrupt_lines) {
  std::vector<ScoreRecord> out;
  std::size_t corrupt = 0;
  std::ifstream in(cache_path, std::ios::binary);
  if (in) {
    std::string line;
    while (std::getline(in, line)) {
      if (is_blank(line)) continue;
      ScoreRecord rec;
      bool ok = false;
      try {
        ok = record_from_json(ordered_json::parse(line), rec);
      } catch (const ordered_json::parse_error&) {
        ok = false;
      }
      if (ok) {
        out.push_back(std::move(rec));
      } else {
        ++corrupt;
      }
    }
  }
  if (corrupt_lines) *corrupt_lines = corrupt;
  return out;
}

std::vector<ScoreRecord> score_dataset(const Scorer& scorer,
                                       const std::vector<Sample>& samples,
                                       const PromptTemplate& tmpl,
                                       const std::filesystem::path& cache_path,
                                       const ScoreOptions& options,
                                       ScoreRunStats* stats) {
  if (options.parallelism < 1) throw_config("parallelism must be >= 1");
  ScoreRunStats local;

  // Index usable cache entries.  First entry per id wins: the cache is
  // append-only, so the earliest line is the one every earlier run agreed on.
  std::map<std::string, ScoreRecord> cached;
  for (ScoreRecord& rec : read_score_cache(cache_path, &local.corrupt_lines)) {
    if (rec.scorer_fingerprint != scorer.fingerprint()) {
      ++local.stale_fingerprint;
      continue;
    }
    cached.emplace(rec.sample_id, std::move(rec));
  }

  std::vector<std::optional<ScoreRecord>> results(samples.size());
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto it = cached.find(samples[i].id);
    if (it != cached.end()) {
      results[i] = it->second;
      ++local.cache_hits;
    } else {
      missing.push_back(i);
    }
  }

  if (!missing.empty()) {
    std::ofstream cache_out(cache_path, std::ios::binary | std::ios::app);
    if (!cache_out) throw_data("cannot append to " + cache_path.string());
    const auto emit = [&](const ScoreRecord& rec) {
      cache_out << record_to_json(rec).dump() << '\n';
      cache_out.flush();
      if (!cache_out.good()) {
        throw_data("short write to " + cache_path.string());
      }
    };

    int workers = static_cast<int>(
        std::min<std::size_t>(static_cast<std::size_t>(options.parallelism),
                              missing.size()));
    if (workers <= 1) {
      for (std::size_t idx : missing) {
        ScoreRecord rec = score_sample(scorer, samples[idx], tmpl);
        emit(rec);
        results[idx] = std::move(rec);
        ++local.computed;
      }
    } else {
      // Workers score in any order; the cache is written strictly in dataset
      // order so every byte of the file is independent of scheduling.
      std::vector<std::optional<ScoreRecord>> done(missing.size());
      std::mutex mu;
      std::condition_variable cv;
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      bool aborted = false;

      auto work = [&] {
        while (true) {
          std::size_t j = next.fetch_add(1);
          if (j >= missing.size()) break;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (aborted) break;
          }
          try {
            ScoreRecord rec = score_sample(scorer, samples[missing[j]], tmpl);
            std::lock_guard<std::mutex> lock(mu);
            done[j] = std::move(rec);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
            aborted = true;
          }
          cv.notify_all();
        }
      };

      std::vector<std::thread> pool;
      pool.reserve(static_cast<std::size_t>(workers));
      for (int w = 0; w < workers; ++w) pool.emplace_back(work);

      for (std::size_t j = 0; j < missing.size(); ++j) {
        std::unique_lock<std::mutex> lock(mu);
        cv.wait(lock, [&] { return done[j].has_value() || aborted; });
        if (!done[j].has_value()) break;
        ScoreRecord rec = std::move(*done[j]);
        lock.unlock();
        emit(rec);
        results[missing[j]] = std::move(rec);
        ++local.computed;
      }
      for (std::thread& t : pool) t.join();
      if (failure) std::rethrow_exception(failure);
    }
  }

  std::vector<ScoreRecord> out;
  out.reserve(samples.size());
  for (auto& rec : results) out.push_back(std::move(*rec));
  if (stats) *stats = local;
  return out;
}

FilterResult filter_misaligned(const std::vector<ScoreRecord>& records) {
  FilterResult out;
  for (const ScoreRecord& rec : records) {
    if (rec.ifd > 1.0) {
      out.dropped.push_back(rec);
    } else {
      out.kept.push_back(rec);
    }
  }
  return out;
}

std::string SelectionStrategy::name() const {
  switch (kind) {
    case StrategyKind::top_ifd: return "top_ifd";
    case StrategyKind::low_ifd: return "low_ifd";
    case StrategyKind::high_ca: return "high_ca";
    case StrategyKind::random: return "random";
    case StrategyKind::diversity: return "diversity";
  }
  return "top_ifd";
}

SelectionStrategy SelectionStrategy::parse(const std::string& text) {
  SelectionStrategy out;
  if (text == "top_ifd") {
    out.kind = StrategyKind::top_ifd;
  } else if (text == "low_ifd") {
    out.kind = StrategyKind::low_ifd;
  } else if (text == "high_ca") {
    out.kind = StrategyKind::high_ca;
  } else if (text == "random") {
    out.kind = StrategyKind::random;
  } else if (text == "diversity") {
    out.kind = StrategyKind::diversity;
  } else {
    throw_config("unknown selection strategy '" + text +
                 "' (expected top_ifd, low_ifd, high_ca, random, diversity)");
  }
  return out;
}

SelectionResult select_count(const std::vector<ScoreRecord>& records,
                             const SelectionStrategy& strategy,
                             std::size_t target,
                             const EmbeddingSet* embeddings) {
  const std::size_t n = records.size();
  SelectionResult out;
  out.target = target;
  const std::size_t take = std::min(target, n);
  out.shortfall = take < target;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> picked;

  switch (strategy.kind) {
    case StrategyKind::top_ifd:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return records[a].ifd > records[b].ifd;
                       });
      picked.assign(order.begin(), order.begin() + static_cast<long>(take));
      break;
    case StrategyKind::low_ifd:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return records[a].ifd < records[b].ifd;
                       });
      picked.assign(order.begin(), order.begin() + static_cast<long>(take));
      break;
    case StrategyKind::high_ca:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) {
                         return records[a].ca > records[b].ca;
                       });
      picked.assign(order.begin(), order.begin() + static_cast<long>(take));
      break;
    case StrategyKind::random: {
      SplitMix64 rng(strategy.seed);
      for (std::size_t j = 0; j < take; ++j) {
        std::size_t swap_with = j + rng.index(n - j);
        std::swap(order[j], order[swap_with]);
        picked.push_back(order[j]);
      }
      break;
    }
    case StrategyKind::diversity: {
      if (embeddings == nullptr) {
        throw_config("diversity selection requires embeddings");
      }
      if (strategy.clusters < 1) {
        throw_config("diversity selection requires clusters >= 1");
      }
      if (n == 0) break;
      std::map<std::string, std::size_t> row_of;
      for (std::size_t r = 0; r < embeddings->count(); ++r) {
        row_of.emplace(embeddings->ids[r], r);
      }
      EmbeddingSet sub;
      sub.dim = embeddings->dim;
      for (const ScoreRecord& rec : records) {
        auto it = row_of.find(rec.sample_id);
        if (it == row_of.end()) {
          throw_data("no embedding for sample '" + rec.sample_id + "'");
        }
        std::span<const double> row = embeddings->row(it->second);
        sub.ids.push_back(rec.sample_id);
        sub.values.insert(sub.values.end(), row.begin(), row.end());
      }
      int k = static_cast<int>(std::min<std::size_t>(
          static_cast<std::size_t>(strategy.clusters), n));
      ClusterAssignment clusters = kmeans(sub, k, strategy.seed);

      // Members of each cluster ordered centre-out (ties by dataset order),
      // then one pick per cluster per round until the quota is met.
      std::vector<std::vector<std::pair<double, std::size_t>>> ranked(
          static_cast<std::size_t>(k));
      for (std::size_t i = 0; i < n; ++i) {
        int c = clusters.labels[i];
        double d = squared_distance(sub.row(i), clusters.centroid(c));
        ranked[static_cast<std::size_t>(c)].emplace_back(d, i);
      }
      for (auto& group : ranked) std::sort(group.begin(), group.end());

      std::size_t round = 0;
      while (picked.size() < take) {
        bool any = false;
        for (int c = 0; c < k && picked.size() < take; ++c) {
          const auto& group = ranked[static_cast<std::size_t>(c)];
          if (round < group.size()) {
            picked.push_back(group[round].second);
            any = true;
          }
        }
        if (!any) break;
        ++round;
      }
      break;
    }
  }

  std::sort(picked.begin(), picked.end());
  out.ids.reserve(picked.size());
  for (std::size_t i : picked) out.ids.push_back(records[i].sample_id);
  return out;
}

SelectionResult select(const std::vector<ScoreRecord>& records,
                       const SelectionStrategy& strategy, double fraction,
                       std::size_t dataset_size,
                       const EmbeddingSet* embeddings) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw_config("selection fraction must be in (0, 1]");
  }
  std::size_t target = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(dataset_size)));
  return select_count(records, strategy, target, embeddings);
}

}  // namespace cherry
