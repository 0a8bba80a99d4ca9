#include "cherry/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "cherry/errors.hpp"
#include "cherry/util.hpp"

namespace cherry {
namespace {

using ordered_json = nlohmann::ordered_json;

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
// Deterministic: fixed rotation order, fixed convergence rule.  On return
// `a` is (numerically) diagonal and column j of `v` is the eigenvector for
// eigenvalue a[j*m+j].
void jacobi_eigen(std::vector<double>& a, std::vector<double>& v,
                  std::size_t m) {
  v.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) v[i * m + i] = 1.0;
  if (m < 2) return;

  double frob = 0.0;
  for (double x : a) frob += x * x;
  const double stop = frob * 1e-28 + 1e-300;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) off += 2.0 * a[p * m + q] * a[p * m + q];
    }
    if (off <= stop) break;

    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        double apq = a[p * m + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * m + p];
        double aqq = a[q * m + q];
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        double tau = s / (1.0 + c);

        a[p * m + p] = app - t * apq;
        a[q * m + q] = aqq + t * apq;
        a[p * m + q] = 0.0;
        a[q * m + p] = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          if (i == p || i == q) continue;
          double aip = a[i * m + p];
          double aiq = a[i * m + q];
          a[i * m + p] = aip - s * (aiq + tau * aip);
          a[p * m + i] = a[i * m + p];
          a[i * m + q] = aiq + s * (aip - tau * aiq);
          a[q * m + i] = a[i * m + q];
        }
        for (std::size_t i = 0; i < m; ++i) {
          double vip = v[i * m + p];
          double viq = v[i * m + q];
          v[i * m + p] = vip - s * (viq + tau * vip);
          v[i * m + q] = viq + s * (vip - tau * viq);
        }
      }
    }
  }
}

void normalize_sign(std::vector<double>& component) {
  for (double x : component) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (double& y : component) y = -y;
      }
      return;
    }
  }
}

std::string csv_field(const std::string& raw) {
  if (raw.find_first_of(",\"\n\r") == std::string::npos) return raw;
  std::string quoted = "\"";
  for (char c : raw) {
    if (c == '"') quoted += "\"\"";
    else quoted += c;
  }
  quoted += '"';
  return quoted;
}

const char* kDensityNote = "no cluster assignment available";

}  // namespace

double percentile(std::vector<double> sorted_values, double q) {
  if (sorted_values.empty()) throw_data("percentile of an empty set");
  if (q < 0.0 || q > 1.0) throw_config("percentile rank must be in [0, 1]");
  const std::size_t n = sorted_values.size();
  double h = q * static_cast<double>(n - 1);
  std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted_values[n - 1];
  double frac = h - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[lo + 1] - sorted_values[lo]);
}

ScoreStats compute_stats(const std::vector<ScoreRecord>& records) {
  if (records.empty()) throw_data("cannot summarize an empty score set");
  ScoreStats out;
  out.count = records.size();

  std::vector<double> values;
  values.reserve(records.size());
  double sum = 0.0;
  std::size_t above = 0;
  for (const ScoreRecord& rec : records) {
    values.push_back(rec.ifd);
    sum += rec.ifd;
    if (rec.ifd > 1.0) ++above;
  }
  out.mean = sum / static_cast<double>(out.count);

  double sq = 0.0;
  for (double v : values) {
    double d = v - out.mean;
    sq += d * d;
  }
  out.stdev = std::sqrt(sq / static_cast<double>(out.count));
  out.fraction_above_1 =
      static_cast<double>(above) / static_cast<double>(out.count);

  std::sort(values.begin(), values.end());
  out.min = values.front();
  out.max = values.back();
  out.p5 = percentile(values, 0.05);
  out.p25 = percentile(values, 0.25);
  out.p50 = percentile(values, 0.50);
  out.p75 = percentile(values, 0.75);
  out.p95 = percentile(values, 0.95);
  return out;
}

std::vector<ClusterDensity> cluster_density(
    const std::vector<ScoreRecord>& records, const ClusterAssignment& clusters,
    const std::vector<std::string>& ids, double fraction) {
  if (!(fraction > 0.0) || fraction > 0.5) {
    throw_config("density fraction must be in (0, 0.5]");
  }
  if (records.size() != ids.size() || clusters.labels.size() != ids.size()) {
    throw_data("records, ids and cluster labels must align");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (records[i].sample_id != ids[i]) {
      throw_data("record order does not match the id order at position " +
                 std::to_string(i));
    }
  }

  // Same code path as real selection, so the analysis cannot drift from it.
  SelectionStrategy top;
  top.kind = StrategyKind::top_ifd;
  SelectionStrategy bottom;
  bottom.kind = StrategyKind::low_ifd;
  SelectionResult top_sel = select(records, top, fraction, records.size());
  SelectionResult bottom_sel = select(records, bottom, fraction, records.size());
  std::set<std::string> top_ids(top_sel.ids.begin(), top_sel.ids.end());
  std::set<std::string> bottom_ids(bottom_sel.ids.begin(), bottom_sel.ids.end());

  std::vector<ClusterDensity> out(static_cast<std::size_t>(clusters.k));
  for (int c = 0; c < clusters.k; ++c) {
    out[static_cast<std::size_t>(c)].cluster = c;
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    ClusterDensity& d = out[static_cast<std::size_t>(clusters.labels[i])];
    d.size += 1;
    if (top_ids.count(ids[i])) d.count_top += 1;
    if (bottom_ids.count(ids[i])) d.count_bottom += 1;
  }
  for (ClusterDensity& d : out) {
    if (d.size > 0) {
      d.density_top = static_cast<double>(d.count_top) /
                      static_cast<double>(d.size);
      d.density_bottom = static_cast<double>(d.count_bottom) /
                         static_cast<double>(d.size);
    }
  }
  return out;
}

PcaResult pca_project(const EmbeddingSet& set) {
  set.validate();
  const std::size_t n = set.count();
  const std::size_t d = set.dim;
  if (n < 2) throw_data("projection needs at least 2 rows");

  PcaResult out;
  out.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row = set.row(i);
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += row[j];
  }
  for (double& m : out.mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row = set.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      centered[i * d + j] = row[j] - out.mean[j];
    }
  }

  const auto top_two = [](const std::vector<double>& diag, std::size_t m) {
    std::array<std::size_t, 2> best{0, 0};
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return diag[a * m + a] > diag[b * m + b];
                     });
    best[0] = order[0];
    best[1] = m > 1 ? order[1] : order[0];
    return best;
  };

  out.components[0].assign(d, 0.0);
  out.components[1].assign(d, 0.0);

  if (d <= n) {
    // Scatter matrix path: S = Xc^T Xc is d x d.
    std::vector<double> s(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = centered.data() + i * d;
      for (std::size_t p = 0; p < d; ++p) {
        for (std::size_t q = p; q < d; ++q) {
          s[p * d + q] += row[p] * row[q];
        }
      }
    }
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < p; ++q) s[p * d + q] = s[q * d + p];
    }
    std::vector<double> v;
    jacobi_eigen(s, v, d);
    std::array<std::size_t, 2> pick = top_two(s, d);
    for (int c = 0; c < 2; ++c) {
      std::size_t j = pick[static_cast<std::size_t>(c)];
      out.eigenvalues[static_cast<std::size_t>(c)] = s[j * d + j];
      for (std::size_t i = 0; i < d; ++i) {
        out.components[static_cast<std::size_t>(c)][i] = v[i * d + j];
      }
    }
  } else {
    // Gram matrix path: G = Xc Xc^T is n x n; map eigenvectors back through
    // the data matrix.
    std::vector<double> g(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          dot += centered[i * d + t] * centered[j * d + t];
        }
        g[i * n + j] = dot;
        g[j * n + i] = dot;
      }
    }
    std::vector<double> v;
    jacobi_eigen(g, v, n);
    std::array<std::size_t, 2> pick = top_two(g, n);
    for (int c = 0; c < 2; ++c) {
      std::size_t j = pick[static_cast<std::size_t>(c)];
      double lambda = g[j * n + j];
      out.eigenvalues[static_cast<std::size_t>(c)] = lambda;
      if (lambda <= 1e-12) continue;  // rank-deficient: leave the axis at 0
      std::vector<double>& w = out.components[static_cast<std::size_t>(c)];
      for (std::size_t t = 0; t < d; ++t) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          acc += centered[i * d + t] * v[i * n + j];
        }
        w[t] = acc;
      }
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& x : w) x /= norm;
      }
    }
  }

  // Repeated top eigenvalue with the same eigenvector picked twice can only
  // happen in the degenerate n==1 case, which the precondition excludes.
  normalize_sign(out.components[0]);
  normalize_sign(out.components[1]);

  out.points.assign(n, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      const std::vector<double>& w = out.components[static_cast<std::size_t>(c)];
      for (std::size_t t = 0; t < d; ++t) acc += centered[i * d + t] * w[t];
      out.points[i][static_cast<std::size_t>(c)] = acc;
    }
  }
  return out;
}

void emit_report(const AnalysisReport& report,
                 const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
  ordered_json doc;
  doc["schema_version"] = 1;
  ordered_json stats;
  stats["count"] = report.stats.count;
  stats["mean"] = report.stats.mean;
  stats["stdev"] = report.stats.stdev;
  stats["min"] = report.stats.min;
  stats["max"] = report.stats.max;
  stats["p5"] = report.stats.p5;
  stats["p25"] = report.stats.p25;
  stats["p50"] = report.stats.p50;
  stats["p75"] = report.stats.p75;
  stats["p95"] = report.stats.p95;
  stats["fraction_above_1"] = report.stats.fraction_above_1;
  doc["stats"] = std::move(stats);

  if (report.densities.has_value()) {
    ordered_json rows = ordered_json::array();
    for (const ClusterDensity& d : *report.densities) {
      ordered_json row;
      row["cluster"] = d.cluster;
      row["size"] = d.size;
      row["count_top"] = d.count_top;
      row["count_bottom"] = d.count_bottom;
      row["density_top"] = d.density_top;
      row["density_bottom"] = d.density_bottom;
      rows.push_back(std::move(row));
    }
    doc["cluster_density"] = std::move(rows);
  } else {
    doc["cluster_density_note"] = kDensityNote;
  }
  doc["rows"] = report.ids.size();

  std::vector<std::string> problems = validate_report(doc);
  if (!problems.empty()) {
    throw_data("refusing to emit a non-conforming report: " + problems.front());
  }

  std::ofstream jout(json_path, std::ios::binary | std::ios::trunc);
  if (!jout) throw_data("cannot write " + json_path.string());
  jout << doc.dump(2) << '\n';
  if (!jout.good()) throw_data("short write to " + json_path.string());

  std::ofstream cout_(csv_path, std::ios::binary | std::ios::trunc);
  if (!cout_) throw_data("cannot write " + csv_path.string());
  cout_ << "id,ifd,x,y,cluster,top_flag,bottom_flag\n";
  for (std::size_t i = 0; i < report.ids.size(); ++i) {
    cout_ << csv_field(report.ids[i]) << ',' << format_double(report.ifd[i])
          << ',' << format_double(report.projection[i][0]) << ','
          << format_double(report.projection[i][1]) << ','
          << (i < report.cluster_of.size() ? report.cluster_of[i] : -1) << ','
          << (i < report.top_flag.size() && report.top_flag[i] ? 1 : 0) << ','
          << (i < report.bottom_flag.size() && report.bottom_flag[i] ? 1 : 0)
          << '\n';
  }
  if (!cout_.good()) throw_data("short write to " + csv_path.string());
}

std::vector<std::string> validate_report(const nlohmann::ordered_json& doc) {
  std::vector<std::string> problems;
  const auto complain = [&](const std::string& msg) { problems.push_back(msg); };

  if (!doc.is_object()) {
    complain("report must be a JSON object");
    return problems;
  }
  if (!doc.contains("schema_version") ||
      !doc["schema_version"].is_number_integer() ||
      doc["schema_version"].get<int>() != 1) {
    complain("schema_version must be the integer 1");
  }
  if (!doc.contains("stats") || !doc["stats"].is_object()) {
    complain("stats object is required");
  } else {
    const auto& stats = doc["stats"];
    if (!stats.contains("count") || !stats["count"].is_number_unsigned()) {
      complain("stats.count must be a non-negative integer");
    }
    for (const char* key : {"mean", "stdev", "min", "max", "p5", "p25", "p50",
                            "p75", "p95", "fraction_above_1"}) {
      if (!stats.contains(key) || !stats[key].is_number()) {
        complain(std::string("stats.") + key + " must be a number");
      }
    }
  }
  bool has_density = doc.contains("cluster_density");
  bool has_note = doc.contains("cluster_density_note");
  if (has_density == has_note) {
    complain("exactly one of cluster_density / cluster_density_note is required");
  }
  if (has_density) {
    if (!doc["cluster_density"].is_array()) {
      complain("cluster_density must be an array");
    } else {
      for (const auto& row : doc["cluster_density"]) {
        if (!row.is_object() || !row.contains("cluster") ||
            !row.contains("size") || !row.contains("count_top") ||
            !row.contains("count_bottom") || !row.contains("density_top") ||
            !row.contains("density_bottom")) {
          complain("cluster_density rows need cluster/size/count_top/"
                   "count_bottom/density_top/density_bottom");
          break;
        }
      }
    }
  }
  if (has_note && !doc["cluster_density_note"].is_string()) {
    complain("cluster_density_note must be a string");
  }
  if (!doc.contains("rows") || !doc["rows"].is_number_unsigned()) {
    complain("rows must be a non-negative integer");
  }
  return problems;
}

}  // namespace cherry
