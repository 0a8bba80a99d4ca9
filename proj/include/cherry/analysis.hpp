#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cherry/diversity.hpp"
#include "cherry/ifd.hpp"

namespace cherry {

// Summary statistics over the ifd column of a score set.
struct ScoreStats {
  std::size_t count = 0;
  double mean = 0.0;
  double stdev = 0.0;  // population standard deviation
  double min = 0.0;
  double max = 0.0;
  double p5 = 0.0;
  double p25 = 0.0;
  double p50 = 0.0;
  double p75 = 0.0;
  double p95 = 0.0;
  double fraction_above_1 = 0.0;  // strictly greater, like the filter
};

// Percentiles use linear interpolation at rank h = q * (n - 1).
double percentile(std::vector<double> sorted_values, double q);
ScoreStats compute_stats(const std::vector<ScoreRecord>& records);

// How strongly each cluster is represented among the hardest / easiest
// fraction of the corpus.  The top/bottom sets reuse select() so that the
// analysis can never drift from what selection would actually pick.
struct ClusterDensity {
  int cluster = 0;
  std::size_t size = 0;
  std::size_t count_top = 0;
  std::size_t count_bottom = 0;
  double density_top = 0.0;     // count_top / size
  double density_bottom = 0.0;  // count_bottom / size
};

// `records` and `clusters.labels` must align with `ids` (dataset order).
// `fraction` is the top/bottom share, in (0, 0.5].
std::vector<ClusterDensity> cluster_density(
    const std::vector<ScoreRecord>& records, const ClusterAssignment& clusters,
    const std::vector<std::string>& ids, double fraction);

struct PcaResult {
  std::vector<std::array<double, 2>> points;  // one (x, y) row per input row
  std::vector<double> mean;                   // input-space mean
  std::array<std::vector<double>, 2> components;  // unit, sign-normalized
  std::array<double, 2> eigenvalues{};            // scatter matrix eigenvalues
};

// Deterministic 2-component PCA via cyclic Jacobi rotations on the scatter
// matrix (or the Gram matrix when rows < dims).  Sign convention: the first
// loading with |value| > 1e-12 in each component is positive.
PcaResult pca_project(const EmbeddingSet& set);

struct AnalysisReport {
  ScoreStats stats;
  std::optional<std::vector<ClusterDensity>> densities;
  // Aligned rows for the projection CSV.
  std::vector<std::string> ids;
  std::vector<double> ifd;
  std::vector<std::array<double, 2>> projection;
  std::vector<int> cluster_of;
  std::vector<bool> top_flag;
  std::vector<bool> bottom_flag;
};

// Writes report.json plus projection.csv
// (id,ifd,x,y,cluster,top_flag,bottom_flag).  When densities are absent the
// JSON carries a note instead of the section.
void emit_report(const AnalysisReport& report,
                 const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path);

// Schema check for report.json; returns human-readable problems (empty when
// the document conforms).
std::vector<std::string> validate_report(const nlohmann::ordered_json& doc);

}  // namespace cherry
