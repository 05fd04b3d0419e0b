#pragma once

// Denoising diffusion over outcomes with classifier-free guidance. The
// noise-prediction network sees (y_s, condition or learned null
// embedding, null flag, s/S, sinusoidal step features).

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <vector>

#include "cfgen/conditioning.hpp"
#include "cfgen/mlp.hpp"

namespace cfgen::gen {

using diffgraph::Graph;
using diffgraph::Mlp;
using diffgraph::Var;

struct NoiseSchedule {
  /// gamma[s - 1] for s = 1..S.
  std::vector<double> gamma;
  std::vector<double> lambda;      // 1 - gamma
  std::vector<double> lambda_bar;  // running product of lambda

  static NoiseSchedule linear(int steps, double gamma_start, double gamma_end);
  static NoiseSchedule from_gamma(std::vector<double> gamma);
  int steps() const { return static_cast<int>(gamma.size()); }
  /// Throws ConfigError unless 0 < gamma < 1 and lambda_bar strictly decreases.
  void validate() const;
};

struct DiffusionConfig {
  int steps = 200;
  double gamma_start = 1e-4;
  double gamma_end = 0.05;
  double guidance_w = 2.0;
  double p_uncond = 0.1;
  int embedding_dim = 8;
  int hidden_width = 64;
  int hidden_layers = 2;
  bool standardize = true;

  void validate() const;
  nlohmann::json to_json() const;
  static DiffusionConfig from_json(const nlohmann::json& j);
};

/// y_s = sqrt(lambda_bar_s) y0 + sqrt(1 - lambda_bar_s) noise, for 1 <= s <= S.
std::vector<double> forward_noise(std::span<const double> y0, int s, const NoiseSchedule& schedule,
                                  std::span<const double> noise);

/// s/S followed by sin/cos features at doubling frequencies.
std::vector<double> step_embedding(int s, int steps, int dim);

class DiffusionModel {
 public:
  DiffusionModel() = default;
  DiffusionModel(int m, int cond_dim, const DiffusionConfig& cfg, Rng& rng);

  int m() const { return m_; }
  int cond_dim() const { return cond_dim_; }
  const DiffusionConfig& config() const { return cfg_; }
  DiffusionConfig& config() { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int input_dim() const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  const Matrix& null_embedding() const { return null_; }

  OutcomeScaler& scaler() { return scaler_; }
  const OutcomeScaler& scaler() const { return scaler_; }

  /// Network parameters followed by the 1 x cond_dim null embedding.
  std::vector<Matrix> parameters() const;
  void set_parameters(std::span<const Matrix> params);

  /// Noise prediction for rows of y_s at step s. Rows with drop[i] = true
  /// use the null embedding instead of cond.row(i).
  Matrix predict_noise(const Matrix& y_s, int s, const Matrix& cond, const std::vector<bool>& drop) const;
  /// (w + 1) eps(cond) - w eps(null).
  Matrix guided_noise(const Matrix& y_s, int s, const Matrix& cond, double w) const;

  nlohmann::json to_json() const;
  static DiffusionModel from_json(const nlohmann::json& j);

 private:
  int m_ = 1;
  int cond_dim_ = 1;
  DiffusionConfig cfg_;
  NoiseSchedule schedule_;
  Mlp net_;
  Matrix null_;
  OutcomeScaler scaler_;
};

/// One training draw per row: s uniform on 1..S, eps standard normal, and
/// with probability p_uncond the null condition. Draw order per row:
/// s, dropout, eps.
struct DiffusionDraw {
  std::vector<int> step;
  std::vector<bool> drop;
  Matrix eps;
};
DiffusionDraw draw_diffusion_noise(const DiffusionModel& model, std::size_t rows, Rng& rng);

/// Per-row squared error ||eps - eps_theta(y_s, s, c)||^2 (n x 1), differentiable.
Var diffusion_loss_rows(const DiffusionModel& model, Graph& g, std::span<const Var> params, const Matrix& y,
                        const Matrix& cond, const DiffusionDraw& draw);

/// Single-sample loss on an already-scaled outcome.
double diffusion_loss(const DiffusionModel& model, std::span<const double> y, std::span<const double> cond,
                      Rng& rng);

/// Ancestral sampling with the guided noise prediction, in original outcome
/// units. Sample i uses its own stream (seed, i).
Matrix diffusion_sample(const DiffusionModel& model, std::span<const double> cond, std::size_t n, std::uint64_t seed);
/// One draw per condition row.
Matrix diffusion_sample(const DiffusionModel& model, const Matrix& cond_rows, std::uint64_t seed);

}  // namespace cfgen::gen
