#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cherry/scorer.hpp"

namespace cherry {

// Row-major matrix of embeddings aligned with sample ids.
struct EmbeddingSet {
  std::vector<std::string> ids;
  std::size_t dim = 0;
  std::vector<double> values;  // ids.size() x dim

  std::size_t count() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values.data() + i * dim, dim);
  }

  void append(const std::string& id, const EmbeddingVector& v);
  void validate() const;  // shape + finiteness; throws data error
};

struct ClusterAssignment {
  int k = 0;
  std::uint64_t seed = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;       // k x dim
  std::vector<int> labels;             // one per row, in input order
  std::vector<double> inertia_trace;   // recorded after every assignment pass
  double inertia = 0.0;                // == inertia_trace.back()

  std::span<const double> centroid(int c) const {
    return std::span<const double>(centroids.data() +
                                       static_cast<std::size_t>(c) * dim,
                                   dim);
  }
};

// Lloyd's algorithm with k-means++ seeding, fully deterministic for a fixed
// (points, k, seed):
//   * all randomness comes from one SplitMix64 stream seeded with `seed`
//   * distance ties assign to the lowest centroid index
//   * clusters that empty out are re-seeded with the point farthest from its
//     current centroid
// Iterates until assignments are stable or max_iters passes.
ClusterAssignment kmeans(const EmbeddingSet& points, int k, std::uint64_t seed,
                         int max_iters = 100);

// Draws up to per_cluster ids from every cluster (seeded Fisher-Yates over
// the cluster's members, clusters visited in index order) and returns them
// in dataset order.  Clusters smaller than per_cluster contribute all of
// their members.
std::vector<std::string> sample_per_cluster(const ClusterAssignment& clusters,
                                            const std::vector<std::string>& ids,
                                            int per_cluster,
                                            std::uint64_t seed);

// Binary embedding cache: header of two little-endian uint64 (dim, count)
// followed by count*dim little-endian float64 values, with ids in a JSON
// sidecar at <path>.ids.json.
void write_embeddings(const EmbeddingSet& set,
                      const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// Cluster assignment export: {k, seed, labels, inertia} (+ trace) as JSON.
void write_assignment(const ClusterAssignment& assignment,
                      const std::filesystem::path& path);
ClusterAssignment read_assignment(const std::filesystem::path& path);

// Squared Euclidean distance (the objective kmeans minimizes).
double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace cherry
