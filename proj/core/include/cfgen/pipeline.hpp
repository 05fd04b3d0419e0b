#pragma once

// End-to-end experiment runs: simulate, fit propensity weights, train each
// method, generate per treatment window and score against the oracle. Every
// stage reads the previous stage's files from the output directory, so the
// stages can also be run one at a time.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfgen/baselines.hpp"
#include "cfgen/eval.hpp"
#include "cfgen/generators.hpp"
#include "cfgen/propensity.hpp"
#include "cfgen/scm.hpp"

namespace cfgen::pipeline {

/// A failure inside one stage. what() is "<stage>: <message>".
class PipelineError : public std::runtime_error {
 public:
  PipelineError(std::string stage, const std::string& message);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ScmSection {
  /// "table4-d1", "table4-d3", "table4-d5", "bimodal-toy" or "" (custom coefficients).
  std::string preset = "table4-d1";
  /// d, T, n_traj, beta0_override, static covariate. The seed comes from
  /// the experiment seed.
  scm::ScmConfig config;
  scm::ScmCoefficients coeffs = scm::ScmCoefficients::table4(1);
  bool toy = false;
  scm::BimodalToySpec toy_spec = scm::BimodalToySpec::defaults();
};

struct PropensitySection {
  propensity::WeightConfig weights;
  propensity::PropensityTrainConfig train;
  /// Use the simulator's true propensities instead of a fitted model.
  bool oracle_weights = false;
};

struct MethodConfig {
  std::string name;
  /// mscvae, msdiffusion, cvae, diffusion, kde, plugin_kde or msm_nn.
  std::string kind;
  gen::GeneratorSpec generator;
  double bandwidth = 0.5;
  baselines::MsmTrainConfig msm;

  bool is_generator() const;
};

struct EvalSection {
  /// Treatment windows to score; empty means all 2^d.
  std::vector<std::string> combos;
  std::size_t oracle_samples = 10000;
  std::size_t generated_samples = 10000;
  double min_observation_share = 0.0;
  scm::Horizon horizon = scm::Horizon::pooled;
  int histogram_bins = 40;
  /// Static-covariate subgroups [lo, hi]. Empty with the covariate enabled
  /// means one group spanning its whole range.
  std::vector<std::pair<double, double>> v_groups;
};

struct ExperimentConfig {
  ScmSection scm;
  PropensitySection propensity;
  std::vector<MethodConfig> methods;
  EvalSection eval;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";

  /// Defaults for a named preset with the given methods (default kinds).
  static ExperimentConfig preset(const std::string& name, std::vector<std::string> methods = {"mscvae"});

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  int outcome_dim() const { return scm.toy ? 2 : 1; }
  bool with_v() const { return scm.config.static_covariate.enabled; }

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

/// One scored cell: a treatment window, optionally within a v subgroup.
struct EvalUnit {
  std::string label;  // "011", or "011_v0" with subgroups
  std::vector<int> a_bar;
  std::optional<std::pair<double, double>> v_range;
};
std::vector<EvalUnit> eval_units(const ExperimentConfig& cfg);

scm::Benchmark make_benchmark(const ExperimentConfig& cfg);

/// Seed for a named sub-task (method, combo) of the run.
std::uint64_t task_seed(std::uint64_t seed, const std::string& name);

// File names inside out_dir.
namespace files {
inline constexpr const char* config = "config.json";
inline constexpr const char* dataset = "dataset.jsonl";
inline constexpr const char* propensity = "propensity.json";
inline constexpr const char* weights = "weights.csv";
inline constexpr const char* metrics_csv = "metrics.csv";
inline constexpr const char* metrics_json = "metrics.json";
inline constexpr const char* report = "report.txt";
std::filesystem::path model(const std::filesystem::path& out, const std::string& method);
std::filesystem::path samples(const std::filesystem::path& out, const std::string& method);
std::filesystem::path histogram(const std::filesystem::path& out, const std::string& method,
                                const std::string& label);
}  // namespace files

/// Writes config.json and dataset.jsonl.
void run_simulate(const ExperimentConfig& cfg);
/// Writes propensity.json and weights.csv (stabilized).
void run_fit_propensity(const ExperimentConfig& cfg);
/// Writes models/<method>.json for every method, or only `only` if given.
void run_train(const ExperimentConfig& cfg, const std::optional<std::string>& only = std::nullopt);
/// Writes samples/<method>.csv with n rows per unit (default eval.generated_samples).
void run_generate(const ExperimentConfig& cfg, std::optional<std::size_t> n = std::nullopt,
                  const std::optional<std::string>& only = std::nullopt);
/// Scores the sample dumps and writes metrics.csv, metrics.json,
/// report.txt and histograms/.
eval::MetricsReport run_evaluate(const ExperimentConfig& cfg);
/// Merges several metrics.csv files into one report in `out_dir`.
eval::MetricsReport run_report(const std::vector<std::filesystem::path>& metrics_files,
                               const std::filesystem::path& out_dir);

/// All stages in order.
eval::MetricsReport run_pipeline(const ExperimentConfig& cfg);

}  // namespace cfgen::pipeline
