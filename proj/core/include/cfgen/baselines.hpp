#pragma once

// Reference estimators: Gaussian KDE per treatment window (optionally
// IPTW-weighted) and a weighted-regression marginal structural model.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include "cfgen/conditioning.hpp"
#include "cfgen/mlp.hpp"
#include "cfgen/optim.hpp"

namespace cfgen::baselines {

using diffgraph::Matrix;

/// Gaussian mixture per treatment window: density(y) = sum_i w_i N(y; y_i, h^2 I),
/// weights summing to 1 within each window.
class KdeModel {
 public:
  struct Component {
    Matrix centers;
    std::vector<double> weights;
  };

  KdeModel() = default;
  KdeModel(double bandwidth, int m, std::map<std::string, Component> components);

  double bandwidth() const { return h_; }
  int m() const { return m_; }
  bool available(const std::string& combo) const { return components_.count(combo) != 0; }
  const Component& component(const std::string& combo) const;
  const std::map<std::string, Component>& components() const { return components_; }

  double density(const std::string& combo, std::span<const double> y) const;
  /// n draws; throws DataError for a window without data.
  Matrix sample(const std::string& combo, std::size_t n, std::uint64_t seed) const;

 private:
  double h_ = 0.5;
  int m_ = 1;
  std::map<std::string, Component> components_;
};

/// Groups samples by window label. Empty `weights` = plain KDE; otherwise
/// the IPTW-weighted plug-in variant.
KdeModel kde_fit(std::span<const scm::WindowSample> samples, std::span<const double> weights, double bandwidth = 0.5);

struct MsmTrainConfig {
  int hidden_width = 64;
  int hidden_layers = 2;
  diffgraph::TrainConfig train{20, 256, 1e-2, 0.5, 4, 0};
};

/// Point prediction of Y from the treatment window (and v), never the covariates.
class MsmRegressor {
 public:
  MsmRegressor() = default;
  MsmRegressor(int d, bool with_v, diffgraph::Mlp net, gen::OutcomeScaler scaler);

  int d() const { return d_; }
  bool with_v() const { return with_v_; }
  int m() const { return net_.output_dim(); }
  const diffgraph::Mlp& net() const { return net_; }

  std::vector<double> predict(std::span<const int> a_bar, std::optional<double> v = std::nullopt) const;
  /// n copies of the prediction: the degenerate distribution at it.
  Matrix sample(std::span<const int> a_bar, std::optional<double> v, std::size_t n) const;

  nlohmann::json to_json() const;
  static MsmRegressor from_json(const nlohmann::json& j);

 private:
  int d_ = 1;
  bool with_v_ = false;
  diffgraph::Mlp net_;
  gen::OutcomeScaler scaler_;
};

struct MsmFit {
  MsmRegressor model;
  diffgraph::TrainTrace trace;
};

/// Minimizes (1/N) sum_i w_i ||y_i - g(a_i)||^2 (outcomes standardized internally).
MsmFit train_msm_nn(std::span<const scm::WindowSample> samples, std::span<const double> weights,
                    const MsmTrainConfig& cfg = {});

}  // namespace cfgen::baselines
