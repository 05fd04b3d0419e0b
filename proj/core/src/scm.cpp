#include "cfgen/scm.hpp"

#include <cmath>
#include <string>

namespace cfgen::scm {

namespace {

constexpr std::uint64_t kCounterfactualTag = 0xcf;

void require_length(const std::vector<double>& v, std::size_t n, const char* name, int d) {
  if (v.size() != n) {
    throw ConfigError(std::string("coefficient vector ") + name + " has length " + std::to_string(v.size()) +
                      ", expected " + std::to_string(n) + " for d = " + std::to_string(d));
  }
}

double lagged(std::span<const double> s, std::size_t t, int lag) {
  return t >= static_cast<std::size_t>(lag) ? s[t - static_cast<std::size_t>(lag)] : 0.0;
}

double lagged(std::span<const int> s, std::size_t t, int lag) {
  return t >= static_cast<std::size_t>(lag) ? static_cast<double>(s[t - static_cast<std::size_t>(lag)]) : 0.0;
}

}  // namespace

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// ---- ScmCoefficients ------------------------------------------------------

void ScmCoefficients::validate(int d, bool require_alpha) const {
  if (d < 1) throw ConfigError("history length d must be positive");
  const auto ud = static_cast<std::size_t>(d);
  if (require_alpha) require_length(alpha, 2 * ud + 1, "alpha", d);
  require_length(beta, 2 * ud, "beta", d);
  require_length(gamma, 2 * ud - 1, "gamma", d);
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
    throw ConfigError("noise_variance must be finite and non-negative");
  }
}

ScmCoefficients ScmCoefficients::table4(int d) {
  switch (d) {
    case 1:
      return {{-3, 2, -1}, {-0.5, 0.5}, {0}, 0.05};
    case 3:
      return {{-1, 12, 6, 3, 2, 1, 0.5}, {-0.5, 0.5, -0.5, 0.5, -0.5, 0.5}, {-1, 1.5, 1, -1.5, -1}, 0.05};
    case 5:
      return {{-1, 12, 6, 3, 1, 0.5, 2, 1, 0.5, 0.1, 0.05},
              {-0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5, -0.5, 0.5},
              {-1, 1.5, 1, 0.5, 0.1, -1.5, -1, -0.5, -0.1},
              0.05};
    default:
      throw ConfigError("table4 presets exist for d = 1, 3, 5 only (got " + std::to_string(d) + ")");
  }
}

nlohmann::json ScmCoefficients::to_json() const {
  return {{"alpha", alpha}, {"beta", beta}, {"gamma", gamma}, {"noise_variance", noise_variance}};
}

ScmCoefficients ScmCoefficients::from_json(const nlohmann::json& j) {
  ScmCoefficients c;
  c.alpha = j.value("alpha", std::vector<double>{});
  c.beta = j.at("beta").get<std::vector<double>>();
  c.gamma = j.at("gamma").get<std::vector<double>>();
  c.noise_variance = j.value("noise_variance", 0.05);
  return c;
}

void ScmConfig::validate() const {
  if (d < 1) throw ConfigError("d must be positive");
  if (T < d) throw ConfigError("T must be >= d (T = " + std::to_string(T) + ", d = " + std::to_string(d) + ")");
  if (n_traj < 1) throw ConfigError("n_traj must be >= 1");
  if (static_covariate.enabled && !(static_covariate.lo <= static_covariate.hi)) {
    throw ConfigError("static covariate interval must satisfy lo <= hi");
  }
}

// ---- WindowSample ---------------------------------------------------------

std::vector<int> WindowSample::a_context() const {
  std::vector<int> out(a_before);
  out.insert(out.end(), a.begin(), a.end());
  return out;
}

std::vector<double> WindowSample::x_context() const {
  std::vector<double> out(x_before);
  out.insert(out.end(), x.begin(), x.end());
  return out;
}

// ---- Dynamics -------------------------------------------------------------

Dynamics::Dynamics(ScmCoefficients coeffs, int d, std::optional<double> beta0_override, StaticCovariate sc)
    : coeffs_(std::move(coeffs)), d_(d), sc_(sc) {
  coeffs_.validate(d, !coeffs_.alpha.empty());
  beta0_ = beta0_override.value_or(coeffs_.beta[0]);
}

double Dynamics::covariate(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const {
  const auto& g = coeffs_.gamma;
  double z = g[0];
  for (int l = 1; l < d_; ++l) {
    z += g[static_cast<std::size_t>(l)] * lagged(a, t, l);
    z += g[static_cast<std::size_t>(d_ - 1 + l)] * lagged(x, t, l);
  }
  if (sc_.enabled) z += sc_.coef_x * v;
  return z;
}

double Dynamics::treatment_logit(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const {
  const auto& b = coeffs_.beta;
  double z = beta0_;
  for (int l = 1; l < d_; ++l) z += b[static_cast<std::size_t>(l)] * lagged(a, t, l);
  for (int l = 0; l < d_; ++l) z += b[static_cast<std::size_t>(d_ + l)] * lagged(x, t, l);
  if (sc_.enabled) z += sc_.coef_a * v;
  return z;
}

double Dynamics::propensity(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const {
  return sigmoid(treatment_logit(x, a, t, v));
}

double Dynamics::linear_outcome(std::span<const double> x, std::span<const int> a, std::size_t t, double v) const {
  const auto& al = coeffs_.alpha;
  double y = al[0];
  for (int l = 0; l < d_; ++l) {
    y += al[static_cast<std::size_t>(1 + l)] * lagged(a, t, l);
    y += al[static_cast<std::size_t>(1 + d_ + l)] * lagged(x, t, l);
  }
  if (sc_.enabled) y += sc_.coef_y * v;
  return y;
}

// ---- BimodalToySpec -------------------------------------------------------

BimodalToySpec BimodalToySpec::defaults() {
  BimodalToySpec s;
  // X_t = 0.6 A_{t-1} + 0.7 X_{t-1}; P(A_t) = sigmoid(-2 + 0.5 A_{t-1} + 2.5 X_t).
  s.dynamics.beta = {-2.0, 0.5, 0.0, 2.5, 0.0, 0.0};
  s.dynamics.gamma = {0.0, 0.6, 0.0, 0.7, 0.0};
  s.dynamics.noise_variance = 0.0;
  return s;
}

void BimodalToySpec::validate(int d) const {
  dynamics.validate(d, false);
  if (base_treatment.size() != static_cast<std::size_t>(d)) throw ConfigError("base_treatment must have d entries");
  if (mode_coeffs.size() != static_cast<std::size_t>(d) + 1) throw ConfigError("mode_coeffs must have d + 1 entries");
  if (mode_prob_override && (*mode_prob_override < 0.0 || *mode_prob_override > 1.0)) {
    throw ConfigError("mode_prob_override must lie in [0, 1]");
  }
  if (base_noise_variance < 0.0 || jitter_sd < 0.0) throw ConfigError("bimodal toy noise scales must be >= 0");
}

nlohmann::json BimodalToySpec::to_json() const {
  nlohmann::json j{{"dynamics", dynamics.to_json()},
                   {"base_intercept", base_intercept},
                   {"base_treatment", base_treatment},
                   {"base_noise_variance", base_noise_variance},
                   {"mode_coeffs", mode_coeffs},
                   {"hotspot_height", hotspot_height},
                   {"jitter_sd", jitter_sd}};
  j["mode_prob_override"] = mode_prob_override ? nlohmann::json(*mode_prob_override) : nlohmann::json(nullptr);
  return j;
}

BimodalToySpec BimodalToySpec::from_json(const nlohmann::json& j) {
  BimodalToySpec s = defaults();
  if (j.contains("dynamics")) s.dynamics = ScmCoefficients::from_json(j.at("dynamics"));
  s.base_intercept = j.value("base_intercept", s.base_intercept);
  s.base_treatment = j.value("base_treatment", s.base_treatment);
  s.base_noise_variance = j.value("base_noise_variance", s.base_noise_variance);
  s.mode_coeffs = j.value("mode_coeffs", s.mode_coeffs);
  s.hotspot_height = j.value("hotspot_height", s.hotspot_height);
  s.jitter_sd = j.value("jitter_sd", s.jitter_sd);
  if (j.contains("mode_prob_override") && !j.at("mode_prob_override").is_null()) {
    s.mode_prob_override = j.at("mode_prob_override").get<double>();
  }
  return s;
}

// ---- Benchmark ------------------------------------------------------------

Benchmark::Benchmark(ScmConfig cfg, ScmCoefficients coeffs, std::optional<BimodalToySpec> toy)
    : cfg_(cfg),
      coeffs_(coeffs),
      toy_(std::move(toy)),
      dyn_(std::move(coeffs), cfg.d, cfg.beta0_override, cfg.static_covariate) {}

Benchmark Benchmark::linear(ScmConfig config, ScmCoefficients coeffs) {
  config.validate();
  coeffs.validate(config.d);
  return Benchmark(config, std::move(coeffs), std::nullopt);
}

Benchmark Benchmark::bimodal(ScmConfig config, BimodalToySpec spec) {
  config.validate();
  spec.validate(config.d);
  ScmCoefficients dyn = spec.dynamics;
  return Benchmark(config, std::move(dyn), std::move(spec));
}

std::vector<double> Benchmark::draw_outcome(const Trajectory& tr, std::size_t t, double v, Rng& rng) const {
  if (!toy_) {
    const double eps = standard_normal(rng) * std::sqrt(coeffs_.noise_variance);
    return {dyn_.linear_outcome(tr.x, tr.a, t, v) + eps};
  }
  const BimodalToySpec& s = *toy_;
  double p_mode = 0.0;
  if (s.mode_prob_override) {
    p_mode = *s.mode_prob_override;
  } else {
    double z = s.mode_coeffs[0];
    for (int l = 0; l < cfg_.d; ++l) z += s.mode_coeffs[static_cast<std::size_t>(1 + l)] * lagged(std::span<const double>(tr.x), t, l);
    p_mode = sigmoid(z);
  }
  const bool hotspot_first = uniform01(rng) < p_mode;
  double base = s.base_intercept;
  for (int l = 0; l < cfg_.d; ++l) base += s.base_treatment[static_cast<std::size_t>(l)] * lagged(std::span<const int>(tr.a), t, l);
  if (cfg_.static_covariate.enabled) base += cfg_.static_covariate.coef_y * v;
  base += standard_normal(rng) * std::sqrt(s.base_noise_variance);
  std::vector<double> y{base + s.jitter_sd * standard_normal(rng), base + s.jitter_sd * standard_normal(rng)};
  y[hotspot_first ? 0 : 1] += s.hotspot_height;
  return y;
}

Trajectory Benchmark::run(Rng& rng, int length, std::span<const int> clamp_tail,
                          std::optional<std::pair<double, double>> v_range) const {
  const auto T = static_cast<std::size_t>(length);
  const auto d = static_cast<std::size_t>(cfg_.d);
  Trajectory tr;
  tr.x.resize(T);
  tr.a.resize(T);
  tr.y.resize(T);
  double v = 0.0;
  if (cfg_.static_covariate.enabled) {
    const auto [lo, hi] = v_range.value_or(std::pair{cfg_.static_covariate.lo, cfg_.static_covariate.hi});
    v = lo + (hi - lo) * uniform01(rng);
    tr.v = v;
  }
  for (std::size_t t = 0; t < T; ++t) {
    tr.x[t] = t == 0 ? uniform01(rng) : dyn_.covariate(tr.x, tr.a, t, v);
    const double u = uniform01(rng);
    if (!clamp_tail.empty() && t + d >= T) {
      tr.a[t] = clamp_tail[t + d - T];
    } else {
      tr.a[t] = u < dyn_.propensity(tr.x, tr.a, t, v) ? 1 : 0;
    }
    tr.y[t] = draw_outcome(tr, t, v, rng);
  }
  return tr;
}

std::vector<Trajectory> Benchmark::simulate() const {
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(cfg_.n_traj));
  for (int i = 0; i < cfg_.n_traj; ++i) out.push_back(simulate_trajectory(static_cast<std::size_t>(i)));
  return out;
}

Trajectory Benchmark::simulate_trajectory(std::size_t index, std::span<const int> clamp_tail,
                                          std::optional<int> length) const {
  if (!clamp_tail.empty() && clamp_tail.size() != static_cast<std::size_t>(cfg_.d)) {
    throw ConfigError("treatment window must have length d");
  }
  Rng rng = make_stream(cfg_.seed, index);
  return run(rng, length.value_or(cfg_.T), clamp_tail, std::nullopt);
}

std::vector<std::vector<double>> Benchmark::counterfactual(std::span<const int> a_bar, std::size_t n,
                                                           std::uint64_t seed, Horizon horizon,
                                                           std::optional<std::pair<double, double>> v_range) const {
  if (a_bar.size() != static_cast<std::size_t>(cfg_.d)) throw ConfigError("treatment window must have length d");
  for (int a : a_bar) {
    if (a != 0 && a != 1) throw ConfigError("treatments must be 0 or 1");
  }
  const std::uint64_t base = derive_seed(seed, kCounterfactualTag);
  std::vector<std::vector<double>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(base, i);
    int length = cfg_.T;
    if (horizon == Horizon::pooled) {
      const int span = cfg_.T - cfg_.d + 1;
      length = cfg_.d + std::min(span - 1, static_cast<int>(uniform01(rng) * span));
    }
    Trajectory tr = run(rng, length, a_bar, v_range);
    out.push_back(std::move(tr.y.back()));
  }
  return out;
}

// ---- free functions -------------------------------------------------------

std::vector<Trajectory> simulate_dataset(const ScmConfig& config, const ScmCoefficients& coeffs) {
  return Benchmark::linear(config, coeffs).simulate();
}

std::vector<WindowSample> windowize(std::span<const Trajectory> trajectories, int d) {
  if (d < 1) throw ConfigError("d must be positive");
  const auto ud = static_cast<std::size_t>(d);
  std::vector<WindowSample> out;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const Trajectory& tr = trajectories[i];
    const std::size_t T = tr.length();
    if (T < ud || tr.x.size() != T || tr.y.size() != T) {
      throw DataError("trajectory " + std::to_string(i) + " has length " + std::to_string(T) +
                      ", shorter than d = " + std::to_string(d) + " or with ragged series");
    }
    for (std::size_t e = ud - 1; e < T; ++e) {
      WindowSample s;
      const std::size_t start = e + 1 - ud;
      s.y = tr.y[e];
      s.a.assign(tr.a.begin() + static_cast<std::ptrdiff_t>(start), tr.a.begin() + static_cast<std::ptrdiff_t>(e + 1));
      s.x.assign(tr.x.begin() + static_cast<std::ptrdiff_t>(start), tr.x.begin() + static_cast<std::ptrdiff_t>(e + 1));
      s.v = tr.v;
      s.a_before.assign(ud - 1, 0);
      s.x_before.assign(ud - 1, 0.0);
      for (std::size_t k = 0; k + 1 < ud; ++k) {
        // position k of the pre-window block is time start - (d - 1) + k
        const std::ptrdiff_t t = static_cast<std::ptrdiff_t>(start) - static_cast<std::ptrdiff_t>(ud - 1 - k);
        if (t >= 0) {
          s.a_before[k] = tr.a[static_cast<std::size_t>(t)];
          s.x_before[k] = tr.x[static_cast<std::size_t>(t)];
        }
      }
      s.trajectory = static_cast<int>(i);
      s.end = static_cast<int>(e);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<std::vector<double>> sample_counterfactual(const ScmCoefficients& coeffs, const ScmConfig& config,
                                                       std::span<const int> a_bar, std::size_t n, Horizon horizon) {
  return Benchmark::linear(config, coeffs).counterfactual(a_bar, n, config.seed, horizon);
}

std::vector<Trajectory> simulate_bimodal_toy(const ScmConfig& config, const BimodalToySpec& spec) {
  if (config.d != 3) throw ConfigError("the bimodal toy is defined for d = 3");
  return Benchmark::bimodal(config, spec).simulate();
}

std::vector<std::vector<int>> all_combos(int d) {
  if (d < 1 || d > 20) throw ConfigError("combo enumeration needs 1 <= d <= 20");
  std::vector<std::vector<int>> out;
  const std::size_t n = std::size_t{1} << d;
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<int> combo(static_cast<std::size_t>(d));
    for (int k = 0; k < d; ++k) combo[static_cast<std::size_t>(k)] = static_cast<int>((c >> (d - 1 - k)) & 1U);
    out.push_back(std::move(combo));
  }
  return out;
}

std::string combo_label(std::span<const int> a_bar) {
  std::string s;
  for (int a : a_bar) s.push_back(a ? '1' : '0');
  return s;
}

std::vector<int> parse_combo(std::string_view label) {
  std::vector<int> out;
  for (char c : label) {
    if (c != '0' && c != '1') throw ConfigError("combo label must contain only 0 and 1: '" + std::string(label) + "'");
    out.push_back(c == '1' ? 1 : 0);
  }
  if (out.empty()) throw ConfigError("empty combo label");
  return out;
}

}  // namespace cfgen::scm
