#pragma once

// Conditional VAE over outcomes given the treatment window: factorized
// Gaussian encoder q(z | y, a) and prior p(z | a), Gaussian decoder with a
// fixed variance.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cfgen/conditioning.hpp"
#include "cfgen/mlp.hpp"

namespace cfgen::gen {

using diffgraph::Graph;
using diffgraph::Mlp;
using diffgraph::Var;

struct CvaeConfig {
  int r = 5;
  int hidden_width = 64;
  int hidden_layers = 2;
  double decoder_variance = 0.01;
  /// Add decoder noise when sampling.
  bool decoder_noise = true;
  /// Standardize outcomes per dimension before training.
  bool standardize = true;

  void validate() const;
  nlohmann::json to_json() const;
  static CvaeConfig from_json(const nlohmann::json& j);
};

class CvaeModel {
 public:
  CvaeModel() = default;
  /// Fresh networks for outcome dimension m and condition width cond_dim.
  CvaeModel(int m, int cond_dim, const CvaeConfig& cfg, Rng& rng);

  int m() const { return m_; }
  int r() const { return cfg_.r; }
  int cond_dim() const { return cond_dim_; }
  const CvaeConfig& config() const { return cfg_; }
  double decoder_variance() const { return cfg_.decoder_variance; }

  Mlp& encoder() { return encoder_; }
  Mlp& prior() { return prior_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& prior() const { return prior_; }
  const Mlp& decoder() const { return decoder_; }

  OutcomeScaler& scaler() { return scaler_; }
  const OutcomeScaler& scaler() const { return scaler_; }

  /// Encoder, prior, decoder parameters concatenated.
  std::vector<Matrix> parameters() const;
  void set_parameters(std::span<const Matrix> params);

  nlohmann::json to_json() const;
  static CvaeModel from_json(const nlohmann::json& j);

 private:
  int m_ = 1;
  int cond_dim_ = 1;
  CvaeConfig cfg_;
  Mlp encoder_;
  Mlp prior_;
  Mlp decoder_;
  OutcomeScaler scaler_;
};

/// Per-row ELBO pieces, each n x 1. elbo = reconstruction - kl.
struct ElboVars {
  Var kl;
  Var reconstruction;
  Var elbo;
};

/// Differentiable per-row ELBO on already-scaled outcomes. `params` follows
/// CvaeModel::parameters(); `noise` is n x r standard normal.
ElboVars cvae_elbo_rows(const CvaeModel& model, Graph& g, std::span<const Var> params, const Matrix& y,
                        const Matrix& cond, const Matrix& noise);

struct ElboTerms {
  double kl = 0.0;
  double reconstruction = 0.0;
  double elbo = 0.0;
};

/// ELBO of a single outcome (in scaled units) for one condition row.
ElboTerms cvae_elbo(const CvaeModel& model, std::span<const double> y, std::span<const double> cond,
                    std::span<const double> noise);

/// Per-row ELBO for a batch, without building gradients.
std::vector<ElboTerms> cvae_elbo_batch(const CvaeModel& model, const Matrix& y, const Matrix& cond,
                                       const Matrix& noise);

/// n draws of Y given one condition row, in original outcome units.
/// Sample i uses its own stream (seed, i).
Matrix cvae_generate(const CvaeModel& model, std::span<const double> cond, std::size_t n, std::uint64_t seed);
/// One draw per condition row.
Matrix cvae_generate(const CvaeModel& model, const Matrix& cond_rows, std::uint64_t seed);

}  // namespace cfgen::gen
