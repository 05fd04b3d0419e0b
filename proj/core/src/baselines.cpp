#include "cfgen/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace cfgen::baselines {

using diffgraph::Graph;
using diffgraph::Var;

KdeModel::KdeModel(double bandwidth, int m, std::map<std::string, Component> components)
    : h_(bandwidth), m_(m), components_(std::move(components)) {
  if (!(h_ > 0.0)) throw ConfigError("KDE bandwidth must be positive");
}

const KdeModel::Component& KdeModel::component(const std::string& combo) const {
  const auto it = components_.find(combo);
  if (it == components_.end()) throw DataError("KDE has no samples for treatment window " + combo);
  return it->second;
}

double KdeModel::density(const std::string& combo, std::span<const double> y) const {
  const Component& c = component(combo);
  if (static_cast<int>(y.size()) != m_) throw std::invalid_argument("KdeModel::density: dimension mismatch");
  const double norm = std::pow(2.0 * std::numbers::pi * h_ * h_, -0.5 * m_);
  double total = 0.0;
  for (Eigen::Index i = 0; i < c.centers.rows(); ++i) {
    double sq = 0.0;
    for (int k = 0; k < m_; ++k) {
      const double diff = y[static_cast<std::size_t>(k)] - c.centers(i, k);
      sq += diff * diff;
    }
    total += c.weights[static_cast<std::size_t>(i)] * std::exp(-0.5 * sq / (h_ * h_));
  }
  return norm * total;
}

Matrix KdeModel::sample(const std::string& combo, std::size_t n, std::uint64_t seed) const {
  const Component& c = component(combo);
  std::vector<double> cdf(c.weights.size());
  std::partial_sum(c.weights.begin(), c.weights.end(), cdf.begin());
  Matrix out(static_cast<Eigen::Index>(n), m_);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(seed, i);
    const double u = uniform01(rng) * cdf.back();
    const auto pick = static_cast<Eigen::Index>(
        std::min<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin(), cdf.size() - 1));
    for (int k = 0; k < m_; ++k) {
      out(static_cast<Eigen::Index>(i), k) = c.centers(pick, k) + h_ * standard_normal(rng);
    }
  }
  return out;
}

KdeModel kde_fit(std::span<const scm::WindowSample> samples, std::span<const double> weights, double bandwidth) {
  if (samples.empty()) throw DataError("kde_fit: no samples");
  if (!weights.empty() && weights.size() != samples.size()) throw DataError("kde_fit: weights/sample count mismatch");
  const int m = static_cast<int>(samples.front().y.size());
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < samples.size(); ++i) groups[scm::combo_label(samples[i].a)].push_back(i);
  std::map<std::string, KdeModel::Component> comps;
  for (const auto& [label, idx] : groups) {
    KdeModel::Component c{Matrix(static_cast<Eigen::Index>(idx.size()), m), std::vector<double>(idx.size())};
    double total = 0.0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& s = samples[idx[r]];
      if (static_cast<int>(s.y.size()) != m) throw DataError("kde_fit: ragged outcomes");
      for (int k = 0; k < m; ++k) c.centers(static_cast<Eigen::Index>(r), k) = s.y[static_cast<std::size_t>(k)];
      const double w = weights.empty() ? 1.0 : weights[idx[r]];
      if (!(w > 0.0) || !std::isfinite(w)) throw DataError("kde_fit: weights must be positive");
      c.weights[r] = w;
      total += w;
    }
    for (double& w : c.weights) w /= total;
    comps.emplace(label, std::move(c));
  }
  return KdeModel(bandwidth, m, std::move(comps));
}

// ---- MSM + NN -------------------------------------------------------------

MsmRegressor::MsmRegressor(int d, bool with_v, diffgraph::Mlp net, gen::OutcomeScaler scaler)
    : d_(d), with_v_(with_v), net_(std::move(net)), scaler_(std::move(scaler)) {
  if (net_.input_dim() != d + (with_v ? 1 : 0)) throw ConfigError("MSM network input must be the treatment window");
}

std::vector<double> MsmRegressor::predict(std::span<const int> a_bar, std::optional<double> v) const {
  if (static_cast<int>(a_bar.size()) != d_) throw ConfigError("treatment window must have length d");
  const Matrix c = gen::condition_rows(a_bar, v, with_v_, 1);
  const Matrix y = scaler_.inverse(net_.forward_batch(c));
  return {y.data(), y.data() + y.size()};
}

Matrix MsmRegressor::sample(std::span<const int> a_bar, std::optional<double> v, std::size_t n) const {
  const auto p = predict(a_bar, v);
  Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p.size()));
  for (std::size_t k = 0; k < p.size(); ++k) out.col(static_cast<Eigen::Index>(k)).setConstant(p[k]);
  return out;
}

nlohmann::json MsmRegressor::to_json() const {
  return {{"kind", "msm_nn"}, {"d", d_}, {"with_v", with_v_}, {"net", net_.to_json()}, {"scaler", scaler_.to_json()}};
}

MsmRegressor MsmRegressor::from_json(const nlohmann::json& j) {
  try {
    return MsmRegressor(j.at("d").get<int>(), j.at("with_v").get<bool>(), diffgraph::Mlp::from_json(j.at("net")),
                        gen::OutcomeScaler::from_json(j.at("scaler")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MSM checkpoint: ") + e.what());
  }
}

MsmFit train_msm_nn(std::span<const scm::WindowSample> samples, std::span<const double> weights,
                    const MsmTrainConfig& cfg) {
  if (samples.empty()) throw DataError("train_msm_nn: no samples");
  if (!weights.empty() && weights.size() != samples.size()) throw DataError("train_msm_nn: weights/sample count mismatch");
  const int d = samples.front().d();
  const bool with_v = samples.front().v.has_value();
  const Matrix cond = gen::condition_matrix(samples, with_v);
  const Matrix y_raw = gen::outcome_matrix(samples);
  gen::OutcomeScaler scaler = gen::OutcomeScaler::fit(y_raw);
  const Matrix y = scaler.transform(y_raw);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(y.rows());
  for (std::size_t i = 0; i < weights.size(); ++i) w(static_cast<Eigen::Index>(i)) = weights[i];

  std::vector<int> dims{static_cast<int>(cond.cols())};
  for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(static_cast<int>(y.cols()));
  Rng init = make_stream(cfg.train.seed, 0x45a);
  diffgraph::Mlp net(dims, diffgraph::Activation::relu, diffgraph::Activation::identity, init);
  std::vector<Matrix> params = net.parameters();

  const auto loss = [&](Graph& g, std::span<const Var> p, std::span<const std::size_t> rows, Rng&) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix cb(n, cond.cols()), yb(n, y.cols()), wb(n, 1);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
      cb.row(r) = cond.row(i);
      yb.row(r) = y.row(i);
      wb(r, 0) = w(i);
    }
    Var pred = net.forward(g.constant(std::move(cb)), p);
    return mean(scale_rows(row_sum(square(g.constant(yb) - pred)), g.constant(wb)));
  };
  MsmFit fit;
  fit.trace = diffgraph::train_minibatch(params, static_cast<std::size_t>(y.rows()), cfg.train, loss);
  net.set_parameters(params);
  fit.model = MsmRegressor(d, with_v, std::move(net), std::move(scaler));
  return fit;
}

}  // namespace cfgen::baselines
