#include "cfgen/discrete_toy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>

namespace cfgen::scm {

namespace {

constexpr std::uint64_t kDiscreteCfTag = 0xd15c;

double draw(const Support& s, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (const auto& [value, p] : s) {
    acc += p;
    if (u < acc) return value;
  }
  return s.back().first;
}

void check_support(const Support& s, const char* name) {
  if (s.empty()) throw ConfigError(std::string(name) + " support is empty");
  double total = 0.0;
  for (const auto& [value, p] : s) {
    if (!(p >= 0.0) || !std::isfinite(value)) throw ConfigError(std::string(name) + " has an invalid entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(name) + " probabilities must sum to 1");
}

// Lag state: x lags (d-1, oldest first) followed by a lags (d-1, oldest first).
using State = std::vector<double>;
using StateDist = std::map<State, double>;

class Enumerator {
 public:
  explicit Enumerator(const DiscreteToySpec& spec)
      : spec_(spec), dyn_(spec.coeffs, spec.d), lag_(static_cast<std::size_t>(spec.d - 1)) {
    xbuf_.resize(lag_ + 1);
    abuf_.resize(lag_ + 1);
  }

  StateDist initial() const { return {{State(2 * lag_, 0.0), 1.0}}; }

  // Advances one time step. `on_step(state, x, a, prob)` sees every
  // (pre-step state, covariate, treatment) triple before the state shifts.
  using Visit = std::function<void(const State&, double, int, double)>;

  StateDist step(const StateDist& dist, int t, std::optional<int> clamp, const Visit& on_step = {}) {
    StateDist next;
    for (const auto& [s, ps] : dist) {
      load(s);
      Support xs;
      if (t == 0) {
        xs = spec_.x0;
      } else {
        const double base = dyn_.covariate(xbuf_, abuf_, lag_, 0.0);
        for (const auto& [xi, pn] : spec_.covariate_noise) xs.emplace_back(std::clamp(base + xi, spec_.x_lo, spec_.x_hi), pn);
      }
      for (const auto& [x, px] : xs) {
        if (px == 0.0) continue;
        xbuf_[lag_] = x;
        const double p1 = dyn_.propensity(xbuf_, abuf_, lag_, 0.0);
        for (int a = 0; a <= 1; ++a) {
          double pa = a == 1 ? p1 : 1.0 - p1;
          if (clamp) pa = *clamp == a ? 1.0 : 0.0;
          if (pa == 0.0) continue;
          const double p = ps * px * pa;
          if (on_step) on_step(s, x, a, p);
          next[shifted(s, x, a)] += p;
        }
      }
      if (next.size() > spec_.state_budget) {
        throw BudgetError("discrete enumeration exceeded the state budget of " + std::to_string(spec_.state_budget) +
                          " at t = " + std::to_string(t));
      }
    }
    return next;
  }

  // Outcome pmf contribution for a (state, x, a) triple with mass p.
  void add_outcome(Pmf& out, const State& s, double x, int a, double p) {
    load(s);
    xbuf_[lag_] = x;
    abuf_[lag_] = a;
    const double mean = dyn_.linear_outcome(xbuf_, abuf_, lag_, 0.0);
    for (const auto& [e, pe] : spec_.outcome_noise) {
      if (pe > 0.0) out[mean + e] += p * pe;
    }
  }

 private:
  void load(const State& s) {
    for (std::size_t k = 0; k < lag_; ++k) {
      xbuf_[k] = s[k];
      abuf_[k] = static_cast<int>(s[lag_ + k]);
    }
    xbuf_[lag_] = 0.0;
    abuf_[lag_] = 0;
  }

  State shifted(const State& s, double x, int a) const {
    State n(2 * lag_);
    if (lag_ == 0) return n;
    for (std::size_t k = 0; k + 1 < lag_; ++k) {
      n[k] = s[k + 1];
      n[lag_ + k] = s[lag_ + k + 1];
    }
    n[lag_ - 1] = x;
    n[2 * lag_ - 1] = a;
    return n;
  }

  const DiscreteToySpec& spec_;
  Dynamics dyn_;
  std::size_t lag_;
  std::vector<double> xbuf_;
  std::vector<int> abuf_;
};

void check_window(const DiscreteToySpec& spec, std::span<const int> a_bar) {
  if (a_bar.size() != static_cast<std::size_t>(spec.d)) throw ConfigError("treatment window must have length d");
  for (int a : a_bar) {
    if (a != 0 && a != 1) throw ConfigError("treatments must be 0 or 1");
  }
}

// Runs one trajectory of the given length, clamping the final d treatments
// when `clamp` is non-empty. Three uniforms per step.
Trajectory run_discrete(const DiscreteToySpec& spec, const Dynamics& dyn, Rng& rng, int length,
                        std::span<const int> clamp) {
  const auto T = static_cast<std::size_t>(length);
  const auto d = static_cast<std::size_t>(spec.d);
  Trajectory tr;
  tr.x.resize(T);
  tr.a.resize(T);
  tr.y.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    if (t == 0) {
      tr.x[t] = draw(spec.x0, rng);
    } else {
      tr.x[t] = std::clamp(dyn.covariate(tr.x, tr.a, t, 0.0) + draw(spec.covariate_noise, rng), spec.x_lo, spec.x_hi);
    }
    const double u = uniform01(rng);
    if (!clamp.empty() && t + d >= T) {
      tr.a[t] = clamp[t + d - T];
    } else {
      tr.a[t] = u < dyn.propensity(tr.x, tr.a, t, 0.0) ? 1 : 0;
    }
    tr.y[t] = {dyn.linear_outcome(tr.x, tr.a, t, 0.0) + draw(spec.outcome_noise, rng)};
  }
  return tr;
}

}  // namespace

DiscreteToySpec DiscreteToySpec::confounded() {
  DiscreteToySpec s;
  s.d = 2;
  s.T = 20;
  // X_t = clip(-1 + A_{t-1} + X_{t-1} + xi); P(A_t) = sigmoid(-1 + 0.5 A_{t-1} + X_t);
  // Y_t = A_t + A_{t-1} + X_t + e.
  s.coeffs.gamma = {-1.0, 1.0, 1.0};
  s.coeffs.beta = {-1.0, 0.5, 1.0, 0.0};
  s.coeffs.alpha = {0.0, 1.0, 1.0, 1.0, 0.0};
  s.coeffs.noise_variance = 0.5;  // variance of outcome_noise; informational
  return s;
}

void DiscreteToySpec::validate() const {
  if (d < 1) throw ConfigError("d must be positive");
  if (T < d) throw ConfigError("T must be >= d");
  coeffs.validate(d);
  check_support(x0, "x0");
  check_support(covariate_noise, "covariate_noise");
  check_support(outcome_noise, "outcome_noise");
  if (!(x_lo <= x_hi)) throw ConfigError("covariate clip range must satisfy x_lo <= x_hi");
  if (state_budget == 0) throw ConfigError("state_budget must be positive");
}

std::vector<Trajectory> simulate_discrete_toy(const DiscreteToySpec& spec, int n_traj, std::uint64_t seed) {
  spec.validate();
  if (n_traj < 1) throw ConfigError("n_traj must be >= 1");
  const Dynamics dyn(spec.coeffs, spec.d);
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(n_traj));
  for (int i = 0; i < n_traj; ++i) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
    out.push_back(run_discrete(spec, dyn, rng, spec.T, {}));
  }
  return out;
}

std::vector<double> sample_counterfactual_discrete(const DiscreteToySpec& spec, std::span<const int> a_bar,
                                                   std::size_t n, std::uint64_t seed, Horizon horizon) {
  spec.validate();
  check_window(spec, a_bar);
  const Dynamics dyn(spec.coeffs, spec.d);
  const std::uint64_t base = derive_seed(seed, kDiscreteCfTag);
  std::vector<double> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_stream(base, i);
    int length = spec.T;
    if (horizon == Horizon::pooled) {
      const int span = spec.T - spec.d + 1;
      length = spec.d + std::min(span - 1, static_cast<int>(uniform01(rng) * span));
    }
    out.push_back(run_discrete(spec, dyn, rng, length, a_bar).y.back()[0]);
  }
  return out;
}

Pmf enumerate_counterfactual_discrete(const DiscreteToySpec& spec, std::span<const int> a_bar, Horizon horizon) {
  spec.validate();
  check_window(spec, a_bar);
  Enumerator en(spec);
  const int d = spec.d;

  // prefix[k] = observational state distribution after k steps.
  const int max_prefix = spec.T - d;
  std::vector<StateDist> prefix{en.initial()};
  for (int k = 0; k < max_prefix; ++k) prefix.push_back(en.step(prefix.back(), k, std::nullopt));

  auto clamped_tail = [&](int length) {
    StateDist dist = prefix[static_cast<std::size_t>(length - d)];
    Pmf out;
    for (int j = 0; j < d; ++j) {
      const int t = length - d + j;
      const bool last = j == d - 1;
      dist = en.step(dist, t, a_bar[static_cast<std::size_t>(j)], [&](const State& s, double x, int a, double p) {
        if (last) en.add_outcome(out, s, x, a, p);
      });
    }
    return out;
  };

  if (horizon == Horizon::fixed) return clamped_tail(spec.T);
  Pmf pooled;
  const double share = 1.0 / static_cast<double>(spec.T - d + 1);
  for (int length = d; length <= spec.T; ++length) {
    for (const auto& [y, p] : clamped_tail(length)) pooled[y] += share * p;
  }
  return pooled;
}

Pmf enumerate_observed_conditional(const DiscreteToySpec& spec, std::span<const int> a_bar) {
  spec.validate();
  check_window(spec, a_bar);
  Enumerator en(spec);
  const auto lag = static_cast<std::size_t>(spec.d - 1);
  Pmf joint;
  StateDist dist = en.initial();
  for (int t = 0; t < spec.T; ++t) {
    const bool window_complete = t >= spec.d - 1;
    dist = en.step(dist, t, std::nullopt, [&](const State& s, double x, int a, double p) {
      if (!window_complete || a != a_bar[lag]) return;
      for (std::size_t k = 0; k < lag; ++k) {
        if (static_cast<int>(s[lag + k]) != a_bar[k]) return;
      }
      en.add_outcome(joint, s, x, a, p);
    });
  }
  double total = 0.0;
  for (const auto& [y, p] : joint) total += p;
  if (total <= 0.0) throw DataError("treatment window " + combo_label(a_bar) + " has zero observational probability");
  for (auto& [y, p] : joint) p /= total;
  return joint;
}

Pmf empirical_pmf(std::span<const double> values, std::span<const double> weights) {
  if (!weights.empty() && weights.size() != values.size()) throw DataError("weights and values differ in length");
  Pmf out;
  double total = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    out[values[i]] += w;
    total += w;
  }
  if (total > 0.0) {
    for (auto& [y, p] : out) p /= total;
  }
  return out;
}

double total_variation(const Pmf& p, const Pmf& q) {
  double s = 0.0;
  auto ip = p.begin();
  auto iq = q.begin();
  while (ip != p.end() || iq != q.end()) {
    if (iq == q.end() || (ip != p.end() && ip->first < iq->first)) {
      s += std::abs(ip->second);
      ++ip;
    } else if (ip == p.end() || iq->first < ip->first) {
      s += std::abs(iq->second);
      ++iq;
    } else {
      s += std::abs(ip->second - iq->second);
      ++ip;
      ++iq;
    }
  }
  return 0.5 * s;
}

}  // namespace cfgen::scm
