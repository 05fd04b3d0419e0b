#pragma once

// Distances between generated and oracle sample sets, and their
// per-window / aggregate report.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfgen/diffgraph.hpp"

namespace cfgen::eval {

using diffgraph::Matrix;

/// Euclidean norm of the difference of the two empirical means (rows are samples).
double mean_distance(const Matrix& gen, const Matrix& oracle);

/// Exact W1 between two empirical measures on the line.
double wasserstein1(std::span<const double> gen, std::span<const double> oracle);
/// Same, for single-column matrices.
double wasserstein1(const Matrix& gen, const Matrix& oracle);

using Projector = std::function<double(std::span<const double>)>;
/// Index of the largest entry (first one on ties).
double argmax_projector(std::span<const double> y);

/// W1 between the projected label distributions.
double hotspot_fid(const Matrix& gen, const Matrix& oracle, const Projector& projector = argmax_projector);

struct ComboRecord {
  std::string method;
  std::string combo;
  bool available = true;
  /// Set when the window had too few observed training samples; such
  /// records are kept but left out of the aggregates.
  bool low_support = false;
  std::size_t n_generated = 0;
  std::size_t n_oracle = 0;
  std::optional<double> mean_dist;
  std::optional<double> w1;
  std::optional<double> fid_star;
};

struct Aggregate {
  std::string method;
  std::string metric;  // "mean_dist", "w1" or "fid_star"
  double avg = 0.0;
  double worst = 0.0;
  std::size_t combos = 0;
};

struct MetricsReport {
  std::vector<ComboRecord> records;
  std::vector<Aggregate> aggregates;
  std::vector<std::string> warnings;

  /// avg = arithmetic mean, worst = max over available, supported combos.
  void recompute_aggregates();
  const Aggregate* find(const std::string& method, const std::string& metric) const;
  const ComboRecord* find_record(const std::string& method, const std::string& combo) const;

  /// One row per method x combo.
  void write_csv(const std::filesystem::path& path) const;
  static MetricsReport read_csv(const std::filesystem::path& path);
  nlohmann::json summary_json() const;
  /// Plain-text table of avg (worst) per method and metric.
  std::string comparison_table() const;
};

struct EvalOptions {
  /// Observed training windows per combo label (for the support filter).
  std::map<std::string, std::size_t> observed_counts;
  /// Combos whose share of observed windows falls below this are flagged.
  double min_observation_share = 0.0;
};

using OracleSampler = std::function<Matrix(const std::string& combo)>;
/// method -> combo -> generated samples.
using MethodSamples = std::map<std::string, std::map<std::string, Matrix>>;

/// Scores every method on every combo. m = 1 yields mean_dist and w1;
/// m >= 2 yields mean_dist and fid_star.
MetricsReport evaluate_all(const MethodSamples& methods, const OracleSampler& oracle,
                           std::span<const std::string> combos, const EvalOptions& options = {});

/// Merges reports (e.g. separate method runs) and recomputes aggregates.
MetricsReport merge_reports(std::span<const MetricsReport> reports);

/// Shared-edge histogram of generated vs oracle values for one outcome
/// dimension. Columns dim, bin_left, bin_right, generated, oracle.
void write_histogram_csv(const std::filesystem::path& path, const Matrix& gen, const Matrix& oracle, int bins = 40);

}  // namespace cfgen::eval
