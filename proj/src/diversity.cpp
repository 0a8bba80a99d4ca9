#include "cherry/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

void put_u64le(std::ofstream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

bool get_u64le(std::ifstream& in, std::uint64_t& v) {
  char buf[8];
  if (!in.read(buf, 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i]))
         << (8 * i);
  }
  return true;
}

std::uint64_t double_bits(double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  return bits;
}

double bits_double(std::uint64_t bits) {
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

// k-means++ seeding: first centroid uniform, the rest weighted by squared
// distance to the nearest centroid chosen so far.
std::vector<std::size_t> seed_centroids(const EmbeddingSet& points, int k,
                                        SplitMix64& rng) {
  const std::size_t n = points.count();
  std::vector<std::size_t> chosen;
  std::vector<bool> is_chosen(n, false);
  std::vector<double> d2(n, 0.0);

  std::size_t first = rng.index(n);
  chosen.push_back(first);
  is_chosen[first] = true;
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(points.row(i), points.row(first));
  }

  while (chosen.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (double w : d2) total += w;

    std::size_t pick = kNone;
    if (total > 0.0) {
      double target = rng.real() * total;
      double running = 0.0;
      std::size_t last_positive = kNone;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] > 0.0) last_positive = i;
        running += d2[i];
        if (running > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      // Floating-point edge: target can land exactly on the total.
      if (pick == kNone) pick = last_positive;
    } else {
      // Every remaining point coincides with a centroid; fall back to the
      // lowest-index point not yet chosen.
      for (std::size_t i = 0; i < n; ++i) {
        if (!is_chosen[i]) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
    is_chosen[pick] = true;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), points.row(pick)));
    }
  }
  return chosen;
}

std::vector<int> assign_labels(const EmbeddingSet& points,
                               const std::vector<double>& centroids, int k,
                               std::size_t dim) {
  std::vector<int> labels(points.count(), 0);
  for (std::size_t i = 0; i < points.count(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_c = 0;
    for (int c = 0; c < k; ++c) {
      std::span<const double> centroid(
          centroids.data() + static_cast<std::size_t>(c) * dim, dim);
      double d = squared_distance(points.row(i), centroid);
      if (d < best) {  // strict: ties keep the lowest centroid index
        best = d;
        best_c = c;
      }
    }
    labels[i] = best_c;
  }
  return labels;
}

double total_inertia(const EmbeddingSet& points,
                     const std::vector<double>& centroids,
                     const std::vector<int>& labels, std::size_t dim) {
  double sum = 0.0;
  for (std::size_t i = 0; i < points.count(); ++i) {
    std::span<const double> centroid(
        centroids.data() + static_cast<std::size_t>(labels[i]) * dim, dim);
    sum += squared_distance(points.row(i), centroid);
  }
  return sum;
}

}  // namespace

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

void EmbeddingSet::append(const std::string& id, const EmbeddingVector& v) {
  if (ids.empty()) {
    dim = v.dim();
  } else if (v.dim() != dim) {
    throw_data("embedding for '" + id + "' has dimension " +
               std::to_string(v.dim()) + ", expected " + std::to_string(dim));
  }
  ids.push_back(id);
  values.insert(values.end(), v.values.begin(), v.values.end());
}

void EmbeddingSet::validate() const {
  if (ids.size() * dim != values.size()) {
    throw_data("embedding matrix shape mismatch: " + std::to_string(ids.size()) +
               " ids, dim " + std::to_string(dim) + ", " +
               std::to_string(values.size()) + " values");
  }
  if (!ids.empty() && dim == 0) throw_data("embedding dimension is zero");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw_data("non-finite embedding value for id '" + ids[i / dim] + "'");
    }
  }
  std::set<std::string> seen;
  for (const std::string& id : ids) {
    if (!seen.insert(id).second) {
      throw_data("duplicate id '" + id + "' in embedding set");
    }
  }
}

ClusterAssignment kmeans(const EmbeddingSet& points, int k, std::uint64_t seed,
                         int max_iters) {
  points.validate();
  const std::size_t n = points.count();
  if (k < 1) throw_config("kmeans requires k >= 1");
  if (static_cast<std::size_t>(k) > n) {
    throw_config("kmeans requires k <= number of points (" +
                 std::to_string(k) + " > " + std::to_string(n) + ")");
  }
  if (max_iters < 1) throw_config("kmeans requires max_iters >= 1");
  const std::size_t dim = points.dim;

  SplitMix64 rng(seed);
  ClusterAssignment out;
  out.k = k;
  out.seed = seed;
  out.dim = dim;

  std::vector<std::size_t> seeds = seed_centroids(points, k, rng);
  out.centroids.assign(static_cast<std::size_t>(k) * dim, 0.0);
  for (int c = 0; c < k; ++c) {
    std::span<const double> src = points.row(seeds[static_cast<std::size_t>(c)]);
    std::copy(src.begin(), src.end(),
              out.centroids.begin() + static_cast<std::size_t>(c) * dim);
  }

  out.labels = assign_labels(points, out.centroids, k, dim);
  out.inertia_trace.push_back(
      total_inertia(points, out.centroids, out.labels, dim));

  for (int iter = 0; iter < max_iters; ++iter) {
    // Update step: means of current members.
    std::vector<double> sums(static_cast<std::size_t>(k) * dim, 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = static_cast<std::size_t>(out.labels[i]);
      counts[c] += 1;
      std::span<const double> p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) sums[c * dim + d] += p[d];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      double inv = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      for (std::size_t d = 0; d < dim; ++d) {
        out.centroids[static_cast<std::size_t>(c) * dim + d] =
            sums[static_cast<std::size_t>(c) * dim + d] * inv;
      }
    }
    // Any cluster that emptied out grabs the point currently farthest from
    // its own centroid (each point is used for at most one re-seed per pass).
    std::vector<bool> reseed_used(n, false);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] != 0) continue;
      double best = -1.0;
      std::size_t far = kNone;
      for (std::size_t i = 0; i < n; ++i) {
        if (reseed_used[i]) continue;
        std::span<const double> centroid(
            out.centroids.data() +
                static_cast<std::size_t>(out.labels[i]) * dim,
            dim);
        double d = squared_distance(points.row(i), centroid);
        if (d > best) {
          best = d;
          far = i;
        }
      }
      if (far == kNone) continue;  // fewer usable points than empty clusters
      reseed_used[far] = true;
      std::span<const double> src = points.row(far);
      std::copy(src.begin(), src.end(),
                out.centroids.begin() + static_cast<std::size_t>(c) * dim);
    }

    std::vector<int> next = assign_labels(points, out.centroids, k, dim);
    out.inertia_trace.push_back(total_inertia(points, out.centroids, next, dim));
    bool stable = (next == out.labels);
    out.labels = std::move(next);
    if (stable) break;
  }

  out.inertia = out.inertia_trace.back();
  return out;
}

std::vector<std::string> sample_per_cluster(const ClusterAssignment& clusters,
                                            const std::vector<std::string>& ids,
                                            int per_cluster,
                                            std::uint64_t seed) {
  if (ids.size() != clusters.labels.size()) {
    throw_data("id list and cluster labels disagree in length");
  }
  if (per_cluster < 1) throw_config("per-cluster sample size must be >= 1");

  std::vector<std::vector<std::size_t>> members(
      static_cast<std::size_t>(clusters.k));
  for (std::size_t i = 0; i < clusters.labels.size(); ++i) {
    members[static_cast<std::size_t>(clusters.labels[i])].push_back(i);
  }

  SplitMix64 rng(seed);
  std::vector<std::size_t> taken;
  for (auto& group : members) {
    std::size_t want =
        std::min(static_cast<std::size_t>(per_cluster), group.size());
    // Partial Fisher-Yates over the cluster's members (dataset order).
    for (std::size_t j = 0; j < want; ++j) {
      std::size_t swap_with = j + rng.index(group.size() - j);
      std::swap(group[j], group[swap_with]);
      taken.push_back(group[j]);
    }
  }
  std::sort(taken.begin(), taken.end());

  std::vector<std::string> out;
  out.reserve(taken.size());
  for (std::size_t i : taken) out.push_back(ids[i]);
  return out;
}

void write_embeddings(const EmbeddingSet& set,
                      const std::filesystem::path& path) {
  set.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  put_u64le(out, static_cast<std::uint64_t>(set.dim));
  put_u64le(out, static_cast<std::uint64_t>(set.count()));
  for (double v : set.values) put_u64le(out, double_bits(v));
  if (!out.good()) throw_data("short write to " + path.string());
  out.close();

  ordered_json ids = set.ids;
  std::filesystem::path sidecar = path;
  sidecar += ".ids.json";
  std::ofstream sout(sidecar, std::ios::binary | std::ios::trunc);
  if (!sout) throw_data("cannot write " + sidecar.string());
  sout << ids.dump() << '\n';
  if (!sout.good()) throw_data("short write to " + sidecar.string());
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  std::uint64_t dim = 0;
  std::uint64_t count = 0;
  if (!get_u64le(in, dim) || !get_u64le(in, count)) {
    throw_data(path.string() + ": truncated embedding header");
  }
  EmbeddingSet set;
  set.dim = static_cast<std::size_t>(dim);
  set.values.resize(static_cast<std::size_t>(dim * count));
  for (double& v : set.values) {
    std::uint64_t bits;
    if (!get_u64le(in, bits)) {
      throw_data(path.string() + ": truncated embedding payload");
    }
    v = bits_double(bits);
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw_data(path.string() + ": trailing bytes after embedding payload");
  }

  std::filesystem::path sidecar = path;
  sidecar += ".ids.json";
  std::ifstream sin(sidecar, std::ios::binary);
  if (!sin) throw_data("cannot open " + sidecar.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(sin);
  } catch (const ordered_json::parse_error& e) {
    throw_data("malformed id sidecar " + sidecar.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw_data(sidecar.string() + ": expected an id array");
  for (const auto& id : doc) {
    if (!id.is_string()) throw_data(sidecar.string() + ": non-string id");
    set.ids.push_back(id.get<std::string>());
  }
  if (set.ids.size() != count) {
    throw_data(sidecar.string() + " lists " + std::to_string(set.ids.size()) +
               " ids but the matrix holds " + std::to_string(count) + " rows");
  }
  set.validate();
  return set;
}

void write_assignment(const ClusterAssignment& assignment,
                      const std::filesystem::path& path) {
  ordered_json doc;
  doc["schema_version"] = 1;
  doc["k"] = assignment.k;
  doc["seed"] = assignment.seed;
  doc["dim"] = assignment.dim;
  doc["inertia"] = assignment.inertia;
  doc["inertia_trace"] = assignment.inertia_trace;
  ordered_json rows = ordered_json::array();
  for (int c = 0; c < assignment.k; ++c) {
    std::span<const double> row = assignment.centroid(c);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  doc["centroids"] = std::move(rows);
  doc["labels"] = assignment.labels;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out.good()) throw_data("short write to " + path.string());
}

ClusterAssignment read_assignment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open " + path.string());
  ordered_json doc;
  try {
    doc = ordered_json::parse(in);
  } catch (const ordered_json::parse_error& e) {
    throw_data("malformed assignment " + path.string() + ": " + e.what());
  }
  try {
    ClusterAssignment out;
    out.k = doc.at("k").get<int>();
    out.seed = doc.at("seed").get<std::uint64_t>();
    out.dim = doc.at("dim").get<std::size_t>();
    out.inertia = doc.at("inertia").get<double>();
    out.inertia_trace = doc.at("inertia_trace").get<std::vector<double>>();
    for (const auto& row : doc.at("centroids")) {
      auto vals = row.get<std::vector<double>>();
      if (vals.size() != out.dim) {
        throw_data(path.string() + ": centroid row width mismatch");
      }
      out.centroids.insert(out.centroids.end(), vals.begin(), vals.end());
    }
    out.labels = doc.at("labels").get<std::vector<int>>();
    if (out.centroids.size() != static_cast<std::size_t>(out.k) * out.dim) {
      throw_data(path.string() + ": centroid matrix shape mismatch");
    }
    for (int label : out.labels) {
      if (label < 0 || label >= out.k) {
        throw_data(path.string() + ": label out of range");
      }
    }
    return out;
  } catch (const ordered_json::exception& e) {
    throw_data("invalid assignment " + path.string() + ": " + e.what());
  }
}

}  // namespace cherry
