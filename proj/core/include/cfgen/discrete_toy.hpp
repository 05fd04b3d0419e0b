#pragma once

// Finite-support version of the linear SCM. Covariates are clipped to a
// lattice and all noise terms are drawn from small pmfs, so the
// counterfactual law under a clamped treatment window can be computed by
// exhaustive enumeration instead of Monte Carlo.

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "cfgen/scm.hpp"

namespace cfgen::scm {

/// Outcome value -> probability.
using Pmf = std::map<double, double>;
/// (value, probability) support list.
using Support = std::vector<std::pair<double, double>>;

struct DiscreteToySpec {
  int d = 2;
  int T = 20;
  ScmCoefficients coeffs;
  Support x0{{0.0, 0.5}, {1.0, 0.5}};
  Support covariate_noise{{-1.0, 0.3}, {0.0, 0.4}, {1.0, 0.3}};
  double x_lo = 0.0;
  double x_hi = 2.0;
  Support outcome_noise{{-1.0, 0.25}, {0.0, 0.5}, {1.0, 0.25}};
  /// Maximum number of distinct (covariate, treatment) lag states per step.
  std::size_t state_budget = 1'000'000;

  /// d = 2, T = 20, with covariates driven by past treatment and driving
  /// both the next treatment and the outcome.
  static DiscreteToySpec confounded();
  void validate() const;
};

std::vector<Trajectory> simulate_discrete_toy(const DiscreteToySpec& spec, int n_traj, std::uint64_t seed);

/// Monte Carlo draws of Y(a_bar), same clamping as Benchmark::counterfactual.
std::vector<double> sample_counterfactual_discrete(const DiscreteToySpec& spec, std::span<const int> a_bar,
                                                   std::size_t n, std::uint64_t seed,
                                                   Horizon horizon = Horizon::pooled);

/// Exact pmf of Y(a_bar) by forward enumeration over lag states.
/// Throws BudgetError when a step has more than spec.state_budget states.
Pmf enumerate_counterfactual_discrete(const DiscreteToySpec& spec, std::span<const int> a_bar,
                                      Horizon horizon = Horizon::pooled);

/// Exact observational pmf of Y_t given that the window ending at t equals
/// a_bar, pooled uniformly over end times t in [d, T].
Pmf enumerate_observed_conditional(const DiscreteToySpec& spec, std::span<const int> a_bar);

/// Weighted empirical pmf (weights need not be normalized; empty weights = uniform).
Pmf empirical_pmf(std::span<const double> values, std::span<const double> weights = {});

double total_variation(const Pmf& p, const Pmf& q);

}  // namespace cfgen::scm
