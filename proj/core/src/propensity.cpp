#include "cfgen/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "cfgen/text.hpp"

namespace cfgen::propensity {

namespace {

using diffgraph::Graph;
using diffgraph::Var;

// Row of raw features for context position c of (a_ctx, x_ctx).
void fill_features(double* row, int d, std::span<const int> a_ctx, std::span<const double> x_ctx, std::size_t c,
                   std::optional<double> v, bool with_v) {
  int k = 0;
  for (int l = 1; l < d; ++l) row[k++] = a_ctx[c - static_cast<std::size_t>(l)];
  for (int l = 0; l < d; ++l) row[k++] = x_ctx[c - static_cast<std::size_t>(l)];
  if (with_v) row[k] = v.value_or(0.0);
}

struct StepRows {
  Matrix raw;
  Eigen::VectorXd label;
};

StepRows collect_steps(std::span<const WindowSample> samples, int d, bool with_v) {
  // Overlapping windows repeat steps; count each (trajectory, time) once
  // when the samples carry distinct provenance, otherwise pool positions.
  std::set<std::pair<int, int>> keys;
  for (const auto& s : samples) keys.emplace(s.trajectory, s.end);
  const bool dedupe = keys.size() == samples.size();

  std::set<std::pair<int, int>> seen;
  std::vector<std::pair<std::size_t, int>> picks;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int tau = 0; tau < d; ++tau) {
      if (dedupe && !seen.emplace(samples[i].trajectory, samples[i].end - (d - 1) + tau).second) continue;
      picks.emplace_back(i, tau);
    }
  }
  const int width = 2 * d - 1 + (with_v ? 1 : 0);
  StepRows out{Matrix(static_cast<Eigen::Index>(picks.size()), width),
               Eigen::VectorXd(static_cast<Eigen::Index>(picks.size()))};
  std::vector<double> row(static_cast<std::size_t>(width));
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto& s = samples[picks[r].first];
    const int tau = picks[r].second;
    const auto a_ctx = s.a_context();
    const auto x_ctx = s.x_context();
    fill_features(row.data(), d, a_ctx, x_ctx, static_cast<std::size_t>(d - 1 + tau), s.v, with_v);
    for (int k = 0; k < width; ++k) out.raw(static_cast<Eigen::Index>(r), k) = row[static_cast<std::size_t>(k)];
    out.label(static_cast<Eigen::Index>(r)) = s.a[static_cast<std::size_t>(tau)];
  }
  return out;
}

void check_sample(const WindowSample& s, int d) {
  if (s.d() != d || static_cast<int>(s.x.size()) != d) throw DataError("window length differs from model d");
  if (static_cast<int>(s.a_before.size()) != d - 1 || static_cast<int>(s.x_before.size()) != d - 1) {
    throw DataError("window sample lacks its d-1 steps of preceding history");
  }
}

}  // namespace

void WeightConfig::validate() const {
  if (!(0.0 <= lower_percentile && lower_percentile < upper_percentile && upper_percentile <= 100.0)) {
    throw ConfigError("weight percentiles must satisfy 0 <= lower < upper <= 100");
  }
}

PropensityModel::PropensityModel(int d, bool with_v, diffgraph::Mlp net, std::vector<double> mean,
                                 std::vector<double> scale)
    : d_(d), with_v_(with_v), net_(std::move(net)), mean_(std::move(mean)), scale_(std::move(scale)) {
  if (net_.input_dim() != input_dim() || net_.output_dim() != 1) {
    throw ConfigError("propensity network shape does not match d");
  }
  if (mean_.size() != static_cast<std::size_t>(input_dim()) || scale_.size() != mean_.size()) {
    throw ConfigError("propensity standardization vectors have the wrong length");
  }
}

PropensityModel PropensityModel::constant(int d, bool with_v, double p) {
  PropensityModel m;
  m.d_ = d;
  m.with_v_ = with_v;
  m.constant_ = std::clamp(p, diffgraph::kProbLo, diffgraph::kProbHi);
  return m;
}

std::vector<double> PropensityModel::features(const WindowSample& s, int tau) const {
  check_sample(s, d_);
  std::vector<double> row(static_cast<std::size_t>(input_dim()));
  fill_features(row.data(), d_, s.a_context(), s.x_context(), static_cast<std::size_t>(d_ - 1 + tau), s.v, with_v_);
  return row;
}

Eigen::VectorXd PropensityModel::probability_batch(const Matrix& raw) const {
  if (constant_) return Eigen::VectorXd::Constant(raw.rows(), *constant_);
  Matrix z = raw;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    z.col(k).array() = (z.col(k).array() - mean_[static_cast<std::size_t>(k)]) / scale_[static_cast<std::size_t>(k)];
  }
  return net_.forward_batch(z).col(0);
}

double PropensityModel::probability(const WindowSample& s, int tau) const {
  const auto row = features(s, tau);
  Matrix raw(1, input_dim());
  for (int k = 0; k < input_dim(); ++k) raw(0, k) = row[static_cast<std::size_t>(k)];
  return probability_batch(raw)(0);
}

nlohmann::json PropensityModel::to_json() const {
  nlohmann::json j{{"kind", "propensity"}, {"d", d_}, {"with_v", with_v_}};
  if (constant_) {
    j["constant"] = *constant_;
  } else {
    j["net"] = net_.to_json();
    j["feature_mean"] = mean_;
    j["feature_scale"] = scale_;
  }
  return j;
}

PropensityModel PropensityModel::from_json(const nlohmann::json& j) {
  try {
    const int d = j.at("d").get<int>();
    const bool with_v = j.at("with_v").get<bool>();
    if (j.contains("constant")) return constant(d, with_v, j.at("constant").get<double>());
    return PropensityModel(d, with_v, diffgraph::Mlp::from_json(j.at("net")),
                           j.at("feature_mean").get<std::vector<double>>(),
                           j.at("feature_scale").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("propensity checkpoint: ") + e.what());
  }
}

FitResult fit_propensity(std::span<const WindowSample> samples, const PropensityTrainConfig& cfg) {
  if (samples.empty()) throw DataError("fit_propensity: no samples");
  const int d = samples.front().d();
  const bool with_v = samples.front().v.has_value();
  for (const auto& s : samples) {
    check_sample(s, d);
    for (int a : s.a) {
      if (a != 0 && a != 1) throw DataError("fit_propensity: treatments must be binary");
    }
  }
  if (cfg.hidden_width < 1 || cfg.hidden_layers < 0) throw ConfigError("invalid propensity network size");
  StepRows steps = collect_steps(samples, d, with_v);
  const double positives = steps.label.sum();
  FitResult result;
  if (positives == 0.0 || positives == static_cast<double>(steps.label.size())) {
    result.model = PropensityModel::constant(d, with_v, positives == 0.0 ? diffgraph::kProbLo : diffgraph::kProbHi);
    result.warning = "degenerate treatment labels: every observed treatment is " +
                     std::string(positives == 0.0 ? "0" : "1") + "; propensity fixed at the clamp boundary";
    return result;
  }

  const Eigen::Index width = steps.raw.cols();
  std::vector<double> mean(static_cast<std::size_t>(width));
  std::vector<double> scale(static_cast<std::size_t>(width));
  Matrix z = steps.raw;
  for (Eigen::Index k = 0; k < width; ++k) {
    const double mu = z.col(k).mean();
    const double sd = std::sqrt((z.col(k).array() - mu).square().mean());
    mean[static_cast<std::size_t>(k)] = mu;
    scale[static_cast<std::size_t>(k)] = sd > 1e-12 ? sd : 1.0;
    z.col(k).array() = (z.col(k).array() - mu) / scale[static_cast<std::size_t>(k)];
  }

  std::vector<int> dims{static_cast<int>(width)};
  for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(1);
  Rng init = make_stream(cfg.train.seed, 0x9e0);
  diffgraph::Mlp net(dims, diffgraph::Activation::relu, diffgraph::Activation::sigmoid, init);
  std::vector<Matrix> params = net.parameters();

  const auto loss = [&](Graph& g, std::span<const Var> p, std::span<const std::size_t> rows, Rng&) {
    Matrix xb(static_cast<Eigen::Index>(rows.size()), width);
    Matrix yb(static_cast<Eigen::Index>(rows.size()), 1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      xb.row(static_cast<Eigen::Index>(r)) = z.row(static_cast<Eigen::Index>(rows[r]));
      yb(static_cast<Eigen::Index>(r), 0) = steps.label(static_cast<Eigen::Index>(rows[r]));
    }
    Var prob = net.forward(g.constant(std::move(xb)), p);
    Var label = g.constant(yb);
    Var not_label = g.constant(Matrix::Ones(yb.rows(), 1) - yb);
    return -diffgraph::mean(label * log(prob) + not_label * log((-prob) + 1.0));
  };
  result.trace = diffgraph::train_minibatch(params, static_cast<std::size_t>(z.rows()), cfg.train, loss);
  net.set_parameters(params);
  if (!net.all_finite()) throw TrainingError("propensity network has non-finite parameters after training");
  result.model = PropensityModel(d, with_v, std::move(net), std::move(mean), std::move(scale));
  return result;
}

double cross_entropy(const PropensityModel& model, std::span<const WindowSample> samples) {
  if (samples.empty()) throw DataError("cross_entropy: no samples");
  const StepRows steps = collect_steps(samples, model.d(), model.with_v());
  const Eigen::VectorXd p = model.probability_batch(steps.raw);
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    total -= steps.label(i) > 0.5 ? std::log(p(i)) : std::log(1.0 - p(i));
  }
  return total / static_cast<double>(p.size());
}

double compute_iptw(const PropensityModel& model, const WindowSample& sample) {
  double w = 1.0;
  for (int tau = 0; tau < model.d(); ++tau) {
    const double p = model.probability(sample, tau);
    w /= sample.a[static_cast<std::size_t>(tau)] == 1 ? p : 1.0 - p;
  }
  return w;
}

std::vector<double> compute_iptw(const PropensityModel& model, std::span<const WindowSample> samples) {
  const int d = model.d();
  const int width = model.input_dim();
  Matrix raw(static_cast<Eigen::Index>(samples.size()) * d, width);
  std::vector<double> row(static_cast<std::size_t>(width));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    check_sample(samples[i], d);
    const auto a_ctx = samples[i].a_context();
    const auto x_ctx = samples[i].x_context();
    for (int tau = 0; tau < d; ++tau) {
      fill_features(row.data(), d, a_ctx, x_ctx, static_cast<std::size_t>(d - 1 + tau), samples[i].v, model.with_v());
      for (int k = 0; k < width; ++k) raw(static_cast<Eigen::Index>(i) * d + tau, k) = row[static_cast<std::size_t>(k)];
    }
  }
  const Eigen::VectorXd p = model.probability_batch(raw);
  std::vector<double> w(samples.size(), 1.0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int tau = 0; tau < d; ++tau) {
      const double pi = p(static_cast<Eigen::Index>(i) * d + tau);
      w[i] /= samples[i].a[static_cast<std::size_t>(tau)] == 1 ? pi : 1.0 - pi;
    }
  }
  return w;
}

double oracle_iptw(const scm::Dynamics& dynamics, const WindowSample& sample) {
  const int d = dynamics.d();
  check_sample(sample, d);
  const auto a_ctx = sample.a_context();
  const auto x_ctx = sample.x_context();
  const double v = sample.v.value_or(0.0);
  double w = 1.0;
  for (int tau = 0; tau < d; ++tau) {
    const auto t = static_cast<std::size_t>(d - 1 + tau);
    const double p = dynamics.propensity(x_ctx, a_ctx, t, v);
    w /= a_ctx[t] == 1 ? p : 1.0 - p;
  }
  return w;
}

double oracle_iptw(const scm::ScmCoefficients& coeffs, const WindowSample& sample) {
  return oracle_iptw(scm::Dynamics(coeffs, sample.d()), sample);
}

std::vector<double> oracle_iptw(const scm::Dynamics& dynamics, std::span<const WindowSample> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(oracle_iptw(dynamics, s));
  return out;
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw DataError("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw ConfigError("percentile must lie in [0, 100]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double pos = p / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::vector<double> stabilize_weights(std::span<const double> weights, const WeightConfig& cfg) {
  cfg.validate();
  if (weights.empty()) throw DataError("stabilize_weights: no weights");
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw DataError("stabilize_weights: weights must be positive and finite");
  }
  const double lo = percentile(weights, cfg.lower_percentile);
  const double hi = percentile(weights, cfg.upper_percentile);
  std::vector<double> out(weights.begin(), weights.end());
  double total = 0.0;
  for (double& w : out) {
    w = std::clamp(w, lo, hi);
    total += w;
  }
  if (cfg.normalize_by_mean) {
    const double mean = total / static_cast<double>(out.size());
    for (double& w : out) w /= mean;
  }
  return out;
}

void write_weights_csv(const std::filesystem::path& path, std::span<const double> weights) {
  std::vector<text::CsvRow> rows;
  rows.reserve(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) rows.push_back({std::to_string(i), text::format_double(weights[i])});
  text::write_csv(path, {"sample_index", "weight"}, rows);
}

std::vector<double> read_weights_csv(const std::filesystem::path& path) {
  const auto table = text::read_csv(path);
  const std::size_t ci = table.column("sample_index");
  const std::size_t cw = table.column("weight");
  std::vector<double> w(table.rows.size());
  for (const auto& row : table.rows) {
    const auto i = text::parse_int(row[ci]);
    if (i < 0 || static_cast<std::size_t>(i) >= w.size()) throw DataError(path.string() + ": sample_index out of range");
    w[static_cast<std::size_t>(i)] = text::parse_double(row[cw]);
  }
  return w;
}

}  // namespace cfgen::propensity
