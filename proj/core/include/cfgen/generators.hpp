#pragma once

// Weighted training of the conditional generators and a common wrapper for
// sampling, checkpoints and sample dumps.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "cfgen/cvae.hpp"
#include "cfgen/diffusion.hpp"
#include "cfgen/optim.hpp"

namespace cfgen::gen {

enum class GeneratorKind { mscvae, msdiffusion, cvae_unweighted, diffusion_unweighted };

std::string to_string(GeneratorKind k);
GeneratorKind generator_kind_from_string(std::string_view name);
bool is_weighted(GeneratorKind k);
bool is_diffusion(GeneratorKind k);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::mscvae;
  diffgraph::TrainConfig train;
  CvaeConfig cvae;
  DiffusionConfig diffusion;
  /// Divide the weights by their mean before training. Stabilized weights
  /// already have mean 1, so this only matters for raw weights.
  bool normalize_weights = true;

  /// Defaults for history length d and outcome dimension m:
  /// lr 1e-3 / 1e-4, 100 / 50 epochs, batch 256, r = 5 for d <= 3 and m = 1.
  static GeneratorSpec defaults(GeneratorKind kind, int d, int m = 1);

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);
};

class GeneratorModel {
 public:
  GeneratorModel() = default;
  GeneratorModel(GeneratorKind kind, int d, bool with_v, std::variant<CvaeModel, DiffusionModel> model);

  GeneratorKind kind() const { return kind_; }
  int d() const { return d_; }
  int m() const;
  bool with_v() const { return with_v_; }

  const CvaeModel& cvae() const { return std::get<CvaeModel>(model_); }
  const DiffusionModel& diffusion() const { return std::get<DiffusionModel>(model_); }
  CvaeModel& cvae() { return std::get<CvaeModel>(model_); }
  DiffusionModel& diffusion() { return std::get<DiffusionModel>(model_); }

  /// n draws of Y(a_bar) in original units, one row per draw.
  Matrix generate(std::span<const int> a_bar, std::optional<double> v, std::size_t n, std::uint64_t seed) const;
  /// One draw per condition row (see condition_rows / condition_matrix).
  Matrix generate_rows(const Matrix& cond, std::uint64_t seed) const;

  nlohmann::json to_json() const;
  static GeneratorModel from_json(const nlohmann::json& j);

 private:
  GeneratorKind kind_ = GeneratorKind::mscvae;
  int d_ = 1;
  bool with_v_ = false;
  std::variant<CvaeModel, DiffusionModel> model_;
};

struct TrainedGenerator {
  GeneratorModel model;
  diffgraph::TrainTrace trace;
};

/// Minimizes (1/N) sum_i w_i * loss_i by minibatch Adam, where loss_i is the
/// negative ELBO or the noise-prediction error. Unweighted kinds ignore
/// `weights`. The hook, if any, sees the model after each epoch.
using GeneratorHook = std::function<void(int epoch, const GeneratorModel& model)>;
TrainedGenerator train_generator(const GeneratorSpec& spec, std::span<const scm::WindowSample> samples,
                                 std::span<const double> weights, const GeneratorHook& hook = {});

/// Generated samples per combination label.
using SampleSet = std::map<std::string, Matrix>;

/// CSV columns combo, sample_index, y_0..y_{m-1}.
void write_samples_csv(const std::filesystem::path& path, const SampleSet& samples);
SampleSet read_samples_csv(const std::filesystem::path& path);

}  // namespace cfgen::gen
