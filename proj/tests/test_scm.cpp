#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "cfgen/dataset_io.hpp"
#include "cfgen/error.hpp"
#include "cfgen/scm.hpp"

using namespace cfgen;
using namespace cfgen::scm;

namespace {

double mean_of(const std::vector<std::vector<double>>& s, std::size_t k = 0) {
  double m = 0;
  for (const auto& v : s) m += v[k];
  return m / static_cast<double>(s.size());
}

double var_of(const std::vector<std::vector<double>>& s, std::size_t k = 0) {
  double m = mean_of(s, k), q = 0;
  for (const auto& v : s) q += (v[k] - m) * (v[k] - m);
  return q / static_cast<double>(s.size() - 1);
}

ScmConfig config(int d, int T, int n, std::uint64_t seed) {
  ScmConfig c;
  c.d = d;
  c.T = T;
  c.n_traj = n;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("table4 presets have the documented lengths") {
  for (int d : {1, 3, 5}) {
    auto c = ScmCoefficients::table4(d);
    CHECK(c.alpha.size() == static_cast<std::size_t>(2 * d + 1));
    CHECK(c.beta.size() == static_cast<std::size_t>(2 * d));
    CHECK(c.gamma.size() == static_cast<std::size_t>(2 * d - 1));
    CHECK_NOTHROW(c.validate(d));
  }
  CHECK_THROWS_AS(ScmCoefficients::table4(2), ConfigError);
}

TEST_CASE("coefficient length mismatch is a configuration error") {
  auto c = ScmCoefficients::table4(3);
  CHECK_THROWS_AS(c.validate(1), ConfigError);
  CHECK_THROWS_AS(simulate_dataset(config(1, 10, 2, 0), c), ConfigError);
  c.noise_variance = -1.0;
  CHECK_THROWS_AS(c.validate(3), ConfigError);
}

TEST_CASE("config invariants") {
  CHECK_THROWS_AS(config(3, 2, 1, 0).validate(), ConfigError);
  CHECK_THROWS_AS(config(1, 5, 0, 0).validate(), ConfigError);
  CHECK_NOTHROW(config(3, 3, 1, 0).validate());
}

TEST_CASE("d=1 with gamma=(0): covariates are (X0, 0, 0, ...)") {
  auto trajs = simulate_dataset(config(1, 50, 200, 4), ScmCoefficients::table4(1));
  for (const auto& tr : trajs) {
    CHECK(tr.x[0] >= 0.0);
    CHECK(tr.x[0] <= 1.0);
    for (std::size_t t = 1; t < tr.x.size(); ++t) REQUIRE(tr.x[t] == 0.0);
  }
}

TEST_CASE("X0 always falls in [0, 1]") {
  for (int d : {1, 3, 5}) {
    auto trajs = simulate_dataset(config(d, 10, 500, 5), ScmCoefficients::table4(d));
    for (const auto& tr : trajs) {
      REQUIRE(tr.x[0] >= 0.0);
      REQUIRE(tr.x[0] <= 1.0);
    }
  }
}

TEST_CASE("d=1 outcome form: alpha=(-3, 2, -1), x=0, a=1 gives -1") {
  Dynamics dyn(ScmCoefficients::table4(1), 1);
  std::vector<double> x{0.0};
  std::vector<int> a{1};
  CHECK(dyn.linear_outcome(x, a, 0, 0.0) == -1.0);
  a[0] = 0;
  CHECK(dyn.linear_outcome(x, a, 0, 0.0) == -3.0);
}

TEST_CASE("d=1 propensity form: beta=(-0.5, 0.5)") {
  Dynamics dyn(ScmCoefficients::table4(1), 1);
  std::vector<double> x{0.0};
  std::vector<int> a{0};
  CHECK(dyn.propensity(x, a, 0, 0.0) == doctest::Approx(1.0 / (1.0 + std::exp(0.5))));
  x[0] = 1.0;
  CHECK(dyn.propensity(x, a, 0, 0.0) == doctest::Approx(0.5));
  Dynamics shifted(ScmCoefficients::table4(1), 1, 3.0);
  CHECK(shifted.propensity(x, a, 0, 0.0) == doctest::Approx(1.0 / (1.0 + std::exp(-3.5))));
}

TEST_CASE("d=3 lag layout: gamma = (intercept, A lags 1..2, X lags 1..2)") {
  ScmCoefficients c = ScmCoefficients::table4(3);
  c.gamma = {0.1, 1.0, 10.0, 100.0, 1000.0};
  Dynamics dyn(c, 3);
  std::vector<double> x{2.0, 3.0, 0.0};
  std::vector<int> a{1, 0, 0};
  // X_2 = 0.1 + 1 * A_1 + 10 * A_0 + 100 * X_1 + 1000 * X_0
  CHECK(dyn.covariate(x, a, 2, 0.0) == doctest::Approx(0.1 + 0 + 10 + 300 + 2000));
}

TEST_CASE("simulation is deterministic and reports the treatment/outcome shapes") {
  auto c = ScmCoefficients::table4(3);
  auto a = simulate_dataset(config(3, 40, 30, 9), c);
  auto b = simulate_dataset(config(3, 40, 30, 9), c);
  auto other = simulate_dataset(config(3, 40, 30, 10), c);
  REQUIRE(a.size() == 30);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].a == b[i].a);
    CHECK(a[i].y == b[i].y);
    differs = differs || a[i].y != other[i].y;
    CHECK(a[i].length() == 40);
    CHECK(a[i].outcome_dim() == 1);
    for (int t : a[i].a) CHECK((t == 0 || t == 1));
  }
  CHECK(differs);
}

TEST_CASE("positivity: every simulated propensity lies strictly in (0, 1)") {
  for (int d : {1, 3, 5}) {
    auto c = ScmCoefficients::table4(d);
    Dynamics dyn(c, d);
    auto trajs = simulate_dataset(config(d, 100, 50, 13), c);
    for (const auto& tr : trajs) {
      for (std::size_t t = 0; t < tr.length(); ++t) {
        double p = dyn.propensity(tr.x, tr.a, t, 0.0);
        REQUIRE(p > 0.0);
        REQUIRE(p < 1.0);
      }
    }
  }
}

TEST_CASE("windowize: counts, slices, and short trajectories") {
  auto trajs = simulate_dataset(config(3, 3, 5, 1), ScmCoefficients::table4(3));
  CHECK(windowize(trajs, 3).size() == 5);

  auto long_trajs = simulate_dataset(config(1, 100, 4, 1), ScmCoefficients::table4(1));
  CHECK(windowize(long_trajs, 1).size() == 400);

  auto t3 = simulate_dataset(config(3, 12, 2, 2), ScmCoefficients::table4(3));
  auto w = windowize(t3, 3);
  REQUIRE(w.size() == 20);
  const auto& last = w[9];
  CHECK(last.trajectory == 0);
  CHECK(last.a == std::vector<int>(t3[0].a.end() - 3, t3[0].a.end()));
  CHECK(last.x == std::vector<double>(t3[0].x.end() - 3, t3[0].x.end()));
  CHECK(last.y == t3[0].y.back());
  CHECK(last.a_before == std::vector<int>{t3[0].a[7], t3[0].a[8]});
  // first window of a trajectory has zero padding before it
  CHECK(w[0].a_before == std::vector<int>{0, 0});
  CHECK(w[0].x_before == std::vector<double>{0.0, 0.0});

  std::vector<Trajectory> bad = {t3[0], Trajectory{{1.0}, {1}, {{0.0}}, std::nullopt}};
  try {
    windowize(bad, 3);
    FAIL("expected rejection");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("trajectory 1") != std::string::npos);
  }
}

TEST_CASE("d=1 counterfactual means are -3 and -1") {
  auto c = ScmCoefficients::table4(1);
  auto cfg = config(1, 100, 1, 17);
  for (auto [a, target] : {std::pair{0, -3.0}, std::pair{1, -1.0}}) {
    std::vector<int> abar{a};
    auto s = sample_counterfactual(c, cfg, abar, 100000);
    double m = mean_of(s), v = var_of(s);
    CHECK(std::abs(m - target) < 0.01);
    // variance within 3 standard errors; se(var) = var * sqrt(2 / (n - 1))
    double se = 0.05 * std::sqrt(2.0 / 99999.0);
    CHECK(std::abs(v - 0.05) < 3 * se);
  }
}

TEST_CASE("zero noise makes counterfactual draws identical") {
  auto c = ScmCoefficients::table4(1);
  c.noise_variance = 0.0;
  std::vector<int> abar{1};
  auto s = sample_counterfactual(c, config(1, 30, 1, 3), abar, 200);
  for (const auto& v : s) CHECK(v[0] == -1.0);
}

TEST_CASE("consistency: clamping to the realized tail reproduces the observed trajectory") {
  for (int d : {1, 3}) {
    auto bench = Benchmark::linear(config(d, 25, 20, 31), ScmCoefficients::table4(d));
    auto trajs = bench.simulate();
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      std::vector<int> tail(trajs[i].a.end() - d, trajs[i].a.end());
      auto again = bench.simulate_trajectory(i, tail);
      CHECK(again.y == trajs[i].y);
      CHECK(again.x == trajs[i].x);
    }
  }
}

TEST_CASE("pooled horizon draws end times across [d, T]") {
  auto c = ScmCoefficients::table4(1);
  auto bench = Benchmark::linear(config(1, 100, 1, 3), c);
  std::vector<int> abar{1};
  auto fixed = bench.counterfactual(abar, 20000, 4, Horizon::fixed);
  auto pooled = bench.counterfactual(abar, 20000, 4, Horizon::pooled);
  // with d=1 the counterfactual law does not depend on the horizon
  CHECK(std::abs(mean_of(fixed) - mean_of(pooled)) < 0.01);
}

TEST_CASE("static covariate stays in its interval and shifts outcomes") {
  auto cfg = config(1, 20, 300, 8);
  cfg.static_covariate.enabled = true;
  cfg.static_covariate.lo = -1.0;
  cfg.static_covariate.hi = 0.0;
  auto trajs = simulate_dataset(cfg, ScmCoefficients::table4(1));
  for (const auto& tr : trajs) {
    REQUIRE(tr.v.has_value());
    CHECK(*tr.v >= -1.0);
    CHECK(*tr.v <= 0.0);
  }
  auto bench = Benchmark::linear(cfg, ScmCoefficients::table4(1));
  std::vector<int> abar{0};
  auto lo = bench.counterfactual(abar, 20000, 1, Horizon::pooled, std::pair{-1.0, -0.5});
  auto hi = bench.counterfactual(abar, 20000, 1, Horizon::pooled, std::pair{-0.5, 0.0});
  // v enters Y directly (coef_y = 1) and through X (coef_x = 0.5, alpha_x = -1),
  // so half a unit of v moves the mean by 0.5 * (1 - 0.5)
  CHECK(std::abs(mean_of(hi) - mean_of(lo) - 0.25) < 0.03);
}

TEST_CASE("bimodal toy: mode probability 1 puts the hotspot at entry 0") {
  auto spec = BimodalToySpec::defaults();
  spec.mode_prob_override = 1.0;
  auto trajs = simulate_bimodal_toy(config(3, 10, 50, 2), spec);
  for (const auto& tr : trajs) {
    for (const auto& y : tr.y) {
      REQUIRE(y.size() == 2);
      CHECK(y[0] > y[1]);
    }
  }
  CHECK_THROWS_AS(simulate_bimodal_toy(config(2, 10, 5, 2), spec), ConfigError);
}

TEST_CASE("bimodal toy: mode probability 0.5 without confounding gives 0.5 proportions") {
  auto spec = BimodalToySpec::defaults();
  spec.mode_prob_override = 0.5;
  spec.dynamics.beta = {0, 0, 0, 0, 0, 0};
  auto bench = Benchmark::bimodal(config(3, 30, 1, 5), spec);
  std::vector<int> abar{0, 1, 1};
  auto s = bench.counterfactual(abar, 100000, 6);
  double p = 0;
  for (const auto& y : s) p += y[0] > y[1];
  CHECK(std::abs(p / 1e5 - 0.5) < 0.01);
}

TEST_CASE("bimodal toy: no treatment effect gives identical laws across windows") {
  auto spec = BimodalToySpec::defaults();
  spec.base_treatment = {0, 0, 0};
  spec.dynamics.gamma = {0, 0, 0, 0.7, 0};  // treatments do not move covariates
  auto bench = Benchmark::bimodal(config(3, 30, 1, 5), spec);
  auto ref = bench.counterfactual(std::vector<int>{0, 0, 0}, 2000, 7);
  for (const auto& c : all_combos(3)) CHECK(bench.counterfactual(c, 2000, 7) == ref);
}

TEST_CASE("combo labels are oldest first and round trip") {
  auto combos = all_combos(3);
  REQUIRE(combos.size() == 8);
  CHECK(combo_label(combos[0]) == "000");
  CHECK(combo_label(combos[3]) == "011");
  CHECK(combos[3] == std::vector<int>{0, 1, 1});
  for (const auto& c : combos) CHECK(parse_combo(combo_label(c)) == c);
  CHECK_THROWS(parse_combo("012"));
}

TEST_CASE("dataset JSON-lines round trip is exact") {
  auto cfg = config(3, 15, 7, 12);
  cfg.static_covariate.enabled = true;
  Dataset data;
  data.header.d = 3;
  data.header.T = 15;
  data.header.seed = 12;
  data.header.coeffs = ScmCoefficients::table4(3);
  data.trajectories = simulate_dataset(cfg, data.header.coeffs);
  auto path = std::filesystem::temp_directory_path() / "cfgen_test_dataset.jsonl";
  write_dataset(path, data);
  auto back = read_dataset(path);
  CHECK(back.header.d == 3);
  CHECK(back.header.T == 15);
  CHECK(back.header.coeffs.alpha == data.header.coeffs.alpha);
  REQUIRE(back.trajectories.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(back.trajectories[i].x == data.trajectories[i].x);
    CHECK(back.trajectories[i].y == data.trajectories[i].y);
    CHECK(back.trajectories[i].v == data.trajectories[i].v);
  }
  std::filesystem::remove(path);
}

TEST_CASE("malformed dataset lines report their line number") {
  auto path = std::filesystem::temp_directory_path() / "cfgen_test_bad.jsonl";
  {
    std::ofstream f(path);
    f << R"({"d": 1, "T": 2, "m": 1, "seed": 0, "coeffs": {"alpha": [-3, 2, -1], "beta": [-0.5, 0.5], "gamma": [0]}})"
      << "\n" << R"({"i": 0, "x": [0.1, 0], "a": [0, 2], "y": [[1], [2]], "v": null})" << "\n";
  }
  try {
    read_dataset(path);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  std::filesystem::remove(path);
}
