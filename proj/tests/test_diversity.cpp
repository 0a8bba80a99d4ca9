#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cherry/diversity.hpp"
#include "cherry/errors.hpp"
#include "cherry/util.hpp"

using namespace cherry;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("cherry_diversity_test_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++));
  fs::create_directories(dir);
  return dir;
}

EmbeddingSet make_set(const std::vector<std::vector<double>>& rows) {
  EmbeddingSet set;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EmbeddingVector v;
    v.values = rows[i];
    set.append("p" + std::to_string(i), v);
  }
  return set;
}

// Two Gaussian-ish blobs on the unit circle, well separated.
EmbeddingSet two_blobs(std::size_t per_blob, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> rows;
  for (std::size_t b = 0; b < 2; ++b) {
    double cx = b == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < per_blob; ++i) {
      double jx = cx + 0.05 * (rng.real() - 0.5);
      double jy = 0.05 * (rng.real() - 0.5);
      double norm = std::sqrt(jx * jx + jy * jy);
      rows.push_back({jx / norm, jy / norm});
    }
  }
  return make_set(rows);
}

}  // namespace

TEST_CASE("k equals n gives singleton clusters with zero inertia") {
  EmbeddingSet set = make_set({{1, 0}, {0, 1}, {-1, 0}, {0, -1}});
  ClusterAssignment a = kmeans(set, 4, 7);
  CHECK(a.k == 4);
  CHECK(a.inertia == doctest::Approx(0.0).epsilon(1e-12));
  std::set<int> used(a.labels.begin(), a.labels.end());
  CHECK(used.size() == 4);
}

TEST_CASE("k equals 1 yields the mean centroid") {
  EmbeddingSet set = make_set({{1, 0}, {0, 1}});
  ClusterAssignment a = kmeans(set, 1, 3);
  REQUIRE(a.k == 1);
  CHECK(a.centroid(0)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.centroid(0)[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.labels == std::vector<int>{0, 0});
}

TEST_CASE("two separated blobs are split cleanly and reproducibly") {
  EmbeddingSet set = two_blobs(40, 11);
  ClusterAssignment a = kmeans(set, 2, 42);
  // All members of one blob share a label, and the blobs get different ones.
  for (std::size_t i = 1; i < 40; ++i) CHECK(a.labels[i] == a.labels[0]);
  for (std::size_t i = 41; i < 80; ++i) CHECK(a.labels[i] == a.labels[40]);
  CHECK(a.labels[0] != a.labels[40]);

  // Brute-force nearest-centroid check with lowest-index tie break.
  for (std::size_t i = 0; i < set.count(); ++i) {
    int best = 0;
    double best_d = squared_distance(set.row(i), a.centroid(0));
    for (int c = 1; c < a.k; ++c) {
      double d = squared_distance(set.row(i), a.centroid(c));
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    CHECK(a.labels[i] == best);
  }

  // Cross-run determinism for a fixed seed; different seeds may differ in
  // label numbering but the same seed must agree bit-for-bit.
  ClusterAssignment b = kmeans(set, 2, 42);
  CHECK(a.labels == b.labels);
  CHECK(a.centroids == b.centroids);
  CHECK(a.inertia == b.inertia);
}

TEST_CASE("inertia decreases monotonically across passes") {
  SplitMix64 rng(5150);
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 200; ++i) {
    double x = rng.real() * 2 - 1;
    double y = rng.real() * 2 - 1;
    double z = rng.real() * 2 - 1;
    double norm = std::sqrt(x * x + y * y + z * z);
    rows.push_back({x / norm, y / norm, z / norm});
  }
  EmbeddingSet set = make_set(rows);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    ClusterAssignment a = kmeans(set, 8, seed);
    REQUIRE(a.inertia_trace.size() >= 1);
    for (std::size_t i = 1; i < a.inertia_trace.size(); ++i) {
      CHECK(a.inertia_trace[i] <= a.inertia_trace[i - 1] + 1e-9);
    }
    CHECK(a.inertia == a.inertia_trace.back());

    // Termination optimality: no point can improve by switching centroid.
    for (std::size_t i = 0; i < set.count(); ++i) {
      double own = squared_distance(set.row(i), a.centroid(a.labels[i]));
      for (int c = 0; c < a.k; ++c) {
        double other = squared_distance(set.row(i), a.centroid(c));
        CHECK(own <= other + 1e-12);
      }
    }
  }
}

TEST_CASE("kmeans validates its inputs") {
  EmbeddingSet set = make_set({{1, 0}, {0, 1}});
  CHECK_THROWS_AS(kmeans(set, 3, 0), Error);  // k > n
  CHECK_THROWS_AS(kmeans(set, 0, 0), Error);  // k < 1
  EmbeddingSet bad = set;
  bad.values[1] = std::nan("");
  CHECK_THROWS_AS(kmeans(bad, 1, 0), Error);
}

TEST_CASE("duplicate ids are rejected") {
  EmbeddingSet set;
  EmbeddingVector v;
  v.values = {1.0};
  set.append("same", v);
  set.append("same", v);
  CHECK_THROWS_AS(set.validate(), Error);
}

TEST_CASE("sample_per_cluster honors budget, membership and order") {
  EmbeddingSet set = two_blobs(30, 99);
  ClusterAssignment a = kmeans(set, 2, 5);
  std::vector<std::string> picked = sample_per_cluster(a, set.ids, 10, 123);
  CHECK(picked.size() == 20);

  // Distinct ids, each belonging to its claimed cluster.
  std::set<std::string> unique(picked.begin(), picked.end());
  CHECK(unique.size() == picked.size());
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < set.ids.size(); ++i) {
    label_of[set.ids[i]] = a.labels[i];
  }
  std::map<int, int> per_cluster;
  for (const std::string& id : picked) per_cluster[label_of[id]]++;
  CHECK(per_cluster[0] == 10);
  CHECK(per_cluster[1] == 10);

  // Output respects dataset order.
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < set.ids.size(); ++i) position[set.ids[i]] = i;
  for (std::size_t i = 1; i < picked.size(); ++i) {
    CHECK(position[picked[i - 1]] < position[picked[i]]);
  }

  // Determinism, and seed sensitivity.
  CHECK(sample_per_cluster(a, set.ids, 10, 123) == picked);
  CHECK(sample_per_cluster(a, set.ids, 10, 124) != picked);
}

TEST_CASE("small clusters contribute everything they have") {
  // 3 points near +x, 1 point near -x: k=2 gives clusters of size 3 and 1.
  EmbeddingSet set = make_set({{1, 0}, {0.99, 0.1}, {0.98, -0.1}, {-1, 0}});
  ClusterAssignment a = kmeans(set, 2, 9);
  std::vector<std::string> picked = sample_per_cluster(a, set.ids, 10, 77);
  CHECK(picked.size() == 4);  // min(m, size) per cluster
}

TEST_CASE("embedding cache round-trips exactly") {
  fs::path dir = temp_dir();
  EmbeddingSet set = two_blobs(10, 3);
  fs::path p = dir / "emb.bin";
  write_embeddings(set, p);
  EmbeddingSet back = read_embeddings(p);
  CHECK(back.ids == set.ids);
  CHECK(back.dim == set.dim);
  CHECK(back.values == set.values);  // bit-exact doubles
}

TEST_CASE("corrupt embedding caches are rejected") {
  fs::path dir = temp_dir();
  EmbeddingSet set = two_blobs(4, 3);
  fs::path p = dir / "emb.bin";
  write_embeddings(set, p);

  // Truncate the payload.
  fs::resize_file(p, fs::file_size(p) - 7);
  CHECK_THROWS_AS(read_embeddings(p), Error);

  // Sidecar id count mismatch.
  write_embeddings(set, p);
  std::ofstream ids(p.string() + ".ids.json", std::ios::trunc);
  ids << "[\"only_one\"]";
  ids.close();
  CHECK_THROWS_AS(read_embeddings(p), Error);
}

TEST_CASE("assignment export round-trips") {
  fs::path dir = temp_dir();
  EmbeddingSet set = two_blobs(12, 8);
  ClusterAssignment a = kmeans(set, 3, 31);
  fs::path p = dir / "assignment.json";
  write_assignment(a, p);
  ClusterAssignment back = read_assignment(p);
  CHECK(back.k == a.k);
  CHECK(back.seed == a.seed);
  CHECK(back.dim == a.dim);
  CHECK(back.labels == a.labels);
  CHECK(back.inertia == doctest::Approx(a.inertia).epsilon(1e-12));
  REQUIRE(back.centroids.size() == a.centroids.size());
  for (std::size_t i = 0; i < a.centroids.size(); ++i) {
    CHECK(back.centroids[i] == doctest::Approx(a.centroids[i]).epsilon(1e-12));
  }
}

TEST_CASE("empty cluster reseeding keeps k populated when possible") {
  // Nine coincident points and one outlier, k=3: naive Lloyd would empty a
  // cluster; reseeding must keep all three in use.
  std::vector<std::vector<double>> rows(9, std::vector<double>{1.0, 0.0});
  rows.push_back({-1.0, 0.0});
  rows.push_back({-0.9, 0.1});
  rows.push_back({0.0, 1.0});
  EmbeddingSet set = make_set(rows);
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    ClusterAssignment a = kmeans(set, 3, seed);
    std::set<int> used(a.labels.begin(), a.labels.end());
    CHECK(used.size() == 3);
  }
}
