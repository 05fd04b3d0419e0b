#pragma once

// Longitudinal simulators with time-varying confounding and their exact
// counterfactual samplers.
//
// Coefficient vectors are laid out as (intercept, treatment-lag block,
// covariate-lag block); inside a block coefficients are ordered by lag,
// smallest lag first. For history length d:
//   gamma (covariate):  gamma0, A lags 1..d-1, X lags 1..d-1      (2d - 1)
//   beta  (propensity): beta0,  A lags 1..d-1, X lags 0..d-1      (2d)
//   alpha (outcome):    alpha0, A lags 0..d-1, X lags 0..d-1      (2d + 1)
// Lags that reach before the start of a trajectory read as zero.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cfgen/error.hpp"
#include "cfgen/random.hpp"

namespace cfgen::scm {

struct ScmCoefficients {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma;
  double noise_variance = 0.05;

  /// Throws ConfigError unless the lengths match history length `d`.
  void validate(int d, bool require_alpha = true) const;

  /// Preset coefficients for d in {1, 3, 5}; noise variance 0.05.
  static ScmCoefficients table4(int d);

  nlohmann::json to_json() const;
  static ScmCoefficients from_json(const nlohmann::json& j);
};

/// Per-trajectory baseline covariate V ~ uniform[lo, hi], entering the
/// covariate, propensity and outcome forms linearly.
struct StaticCovariate {
  bool enabled = false;
  double lo = 0.0;
  double hi = 1.0;
  double coef_x = 0.5;
  double coef_a = 0.5;
  double coef_y = 1.0;
};

struct ScmConfig {
  int d = 1;
  int T = 100;
  int n_traj = 2000;
  std::uint64_t seed = 0;
  std::optional<double> beta0_override;
  StaticCovariate static_covariate;

  void validate() const;
};

struct Trajectory {
  std::vector<double> x;
  std::vector<int> a;
  std::vector<std::vector<double>> y;
  std::optional<double> v;

  std::size_t length() const { return a.size(); }
  std::size_t outcome_dim() const { return y.empty() ? 0 : y.front().size(); }
};

/// One (y, a_bar, x_bar[, v]) tuple. Windows are oldest first.
/// `a_before`/`x_before` hold the d-1 steps that precede the window
/// (zero where the trajectory had not started); propensities at early
/// window positions depend on them.
struct WindowSample {
  std::vector<double> y;
  std::vector<int> a;
  std::vector<double> x;
  std::optional<double> v;
  std::vector<int> a_before;
  std::vector<double> x_before;
  int trajectory = 0;
  int end = 0;

  int d() const { return static_cast<int>(a.size()); }
  std::vector<int> a_context() const;
  std::vector<double> x_context() const;
};

/// Which window end time a counterfactual draw targets.
///  fixed:  the last step of a length-T trajectory.
///  pooled: an end time drawn uniformly from [d, T], matching the mix of
///          windows produced by windowize().
enum class Horizon { fixed, pooled };

/// Covariate and treatment recurrences shared by all simulators.
class Dynamics {
 public:
  Dynamics(ScmCoefficients coeffs, int d, std::optional<double> beta0_override = std::nullopt,
           StaticCovariate static_covariate = {});

  int d() const { return d_; }
  const ScmCoefficients& coefficients() const { return coeffs_; }

  /// Deterministic part of X_t for t >= 1 given x[0..t-1] and a[0..t-1].
  double covariate(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const;
  /// Logit of P(A_t = 1) given x[0..t] and a[0..t-1].
  double treatment_logit(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const;
  double propensity(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const;
  /// alpha-linear outcome mean given x[0..t] and a[0..t] (no noise).
  double linear_outcome(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const;

 private:
  ScmCoefficients coeffs_;
  int d_;
  double beta0_;
  StaticCovariate sc_;
};

/// Two-entry outcome: a Bernoulli mode indicator L_t (probability depends on
/// the covariate window) picks which entry carries the hotspot; a
/// treatment-dependent base level shifts both entries.
struct BimodalToySpec {
  ScmCoefficients dynamics;  // beta and gamma used; alpha ignored
  double base_intercept = 0.45;
  std::vector<double> base_treatment{-0.1, -0.15, -0.2};  // A lags 0, 1, 2
  double base_noise_variance = 0.001;
  std::vector<double> mode_coeffs{-2.0, 2.0, 1.0, 0.0};  // intercept, X lags 0..d-1
  std::optional<double> mode_prob_override;
  double hotspot_height = 1.0;
  double jitter_sd = 0.1;

  static BimodalToySpec defaults();
  void validate(int d) const;
  nlohmann::json to_json() const;
  static BimodalToySpec from_json(const nlohmann::json& j);
};

/// A simulator plus its counterfactual oracle: either the linear SCM (m = 1)
/// or the bimodal toy (m = 2).
class Benchmark {
 public:
  static Benchmark linear(ScmConfig config, ScmCoefficients coeffs);
  static Benchmark bimodal(ScmConfig config, BimodalToySpec spec);

  int d() const { return cfg_.d; }
  int m() const { return toy_ ? 2 : 1; }
  bool is_bimodal() const { return toy_.has_value(); }
  const ScmConfig& config() const { return cfg_; }
  const ScmCoefficients& coefficients() const { return coeffs_; }
  const std::optional<BimodalToySpec>& toy() const { return toy_; }
  const Dynamics& dynamics() const { return dyn_; }

  std::vector<Trajectory> simulate() const;

  /// Trajectory `index` of simulate(). With a non-empty `clamp_tail` the
  /// final d treatments are fixed to it; every random draw is still
  /// consumed so that a clamp equal to the realized treatments reproduces
  /// the observed trajectory exactly.
  Trajectory simulate_trajectory(std::size_t index, std::span<const int> clamp_tail = {},
                                 std::optional<int> length = std::nullopt) const;

  /// n exact draws of Y(a_bar). `v_range` restricts the static covariate.
  std::vector<std::vector<double>> counterfactual(std::span<const int> a_bar, std::size_t n, std::uint64_t seed,
                                                  Horizon horizon = Horizon::pooled,
                                                  std::optional<std::pair<double, double>> v_range = {}) const;

 private:
  Benchmark(ScmConfig cfg, ScmCoefficients coeffs, std::optional<BimodalToySpec> toy);
  Trajectory run(Rng& rng, int length, std::span<const int> clamp_tail,
                 std::optional<std::pair<double, double>> v_range) const;
  std::vector<double> draw_outcome(const Trajectory& tr, std::size_t t, double v, Rng& rng) const;

  ScmConfig cfg_;
  ScmCoefficients coeffs_;
  std::optional<BimodalToySpec> toy_;
  Dynamics dyn_;
};

std::vector<Trajectory> simulate_dataset(const ScmConfig& config, const ScmCoefficients& coeffs);

/// One window per end time t in [d, T] (1-based), i.e. T - d + 1 per trajectory.
std::vector<WindowSample> windowize(std::span<const Trajectory> trajectories, int d);

/// Clamps the final d treatments to a_bar and emits Y(a_bar). Seeded from config.seed.
std::vector<std::vector<double>> sample_counterfactual(const ScmCoefficients& coeffs, const ScmConfig& config,
                                                       std::span<const int> a_bar, std::size_t n,
                                                       Horizon horizon = Horizon::fixed);

std::vector<Trajectory> simulate_bimodal_toy(const ScmConfig& config,
                                             const BimodalToySpec& spec = BimodalToySpec::defaults());

/// All 2^d treatment windows in label order "0..0", "0..1", ..., "1..1".
std::vector<std::vector<int>> all_combos(int d);
/// Oldest-first label, e.g. {0, 1, 1} -> "011".
std::string combo_label(std::span<const int> a_bar);
std::vector<int> parse_combo(std::string_view label);

double sigmoid(double z);

}  // namespace cfgen::scm
