#pragma once

// Per-step treatment propensities and the subject-specific inverse
// probability weights built from them.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfgen/mlp.hpp"
#include "cfgen/optim.hpp"
#include "cfgen/scm.hpp"

namespace cfgen::propensity {

using diffgraph::Matrix;
using scm::WindowSample;

struct WeightConfig {
  double lower_percentile = 0.01;
  double upper_percentile = 99.99;
  bool normalize_by_mean = true;

  void validate() const;
};

struct PropensityTrainConfig {
  int hidden_width = 64;
  int hidden_layers = 2;
  diffgraph::TrainConfig train{20, 256, 1e-3, 0.5, 4, 0};
};

/// P(A_t = 1 | d-1 previous treatments, d most recent covariates[, v]),
/// one network shared by every window position.
class PropensityModel {
 public:
  PropensityModel() = default;
  PropensityModel(int d, bool with_v, diffgraph::Mlp net, std::vector<double> mean, std::vector<double> scale);
  /// Model that always returns `p`; used when the labels have a single class.
  static PropensityModel constant(int d, bool with_v, double p);

  int d() const { return d_; }
  bool with_v() const { return with_v_; }
  int input_dim() const { return 2 * d_ - 1 + (with_v_ ? 1 : 0); }
  bool is_constant() const { return constant_.has_value(); }

  /// Raw (unstandardized) feature row for window position `tau` (0-based,
  /// oldest first) of a sample.
  std::vector<double> features(const WindowSample& s, int tau) const;

  /// P(A = 1) at window position `tau`.
  double probability(const WindowSample& s, int tau) const;
  /// P(A = 1) for a batch of raw feature rows.
  Eigen::VectorXd probability_batch(const Matrix& raw) const;

  const diffgraph::Mlp& net() const { return net_; }
  const std::vector<double>& feature_mean() const { return mean_; }
  const std::vector<double>& feature_scale() const { return scale_; }

  nlohmann::json to_json() const;
  static PropensityModel from_json(const nlohmann::json& j);

 private:
  int d_ = 1;
  bool with_v_ = false;
  diffgraph::Mlp net_;
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::optional<double> constant_;
};

struct FitResult {
  PropensityModel model;
  diffgraph::TrainTrace trace;
  /// Non-empty when the data carried a single treatment class.
  std::string warning;
};

/// Minimizes binary cross-entropy over every (trajectory, time) step
/// covered by the windows. Windows overlap, so each step enters once.
FitResult fit_propensity(std::span<const WindowSample> samples, const PropensityTrainConfig& cfg);

/// Mean binary cross-entropy of the model on the steps covered by `samples`.
double cross_entropy(const PropensityModel& model, std::span<const WindowSample> samples);

/// prod_tau 1 / f(a_tau | history) with the fitted per-step model.
double compute_iptw(const PropensityModel& model, const WindowSample& sample);
std::vector<double> compute_iptw(const PropensityModel& model, std::span<const WindowSample> samples);

/// Same product with the simulator's true propensity.
double oracle_iptw(const scm::Dynamics& dynamics, const WindowSample& sample);
double oracle_iptw(const scm::ScmCoefficients& coeffs, const WindowSample& sample);
std::vector<double> oracle_iptw(const scm::Dynamics& dynamics, std::span<const WindowSample> samples);

/// Linear-interpolation percentile, p in [0, 100].
double percentile(std::span<const double> values, double p);

/// Truncates at the configured percentiles, then divides by the mean.
std::vector<double> stabilize_weights(std::span<const double> weights, const WeightConfig& cfg = {});

/// CSV with columns sample_index, weight.
void write_weights_csv(const std::filesystem::path& path, std::span<const double> weights);
std::vector<double> read_weights_csv(const std::filesystem::path& path);

}  // namespace cfgen::propensity
