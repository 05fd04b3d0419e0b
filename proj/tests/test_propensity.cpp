#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "cfgen/discrete_toy.hpp"
#include "cfgen/error.hpp"
#include "cfgen/propensity.hpp"
#include "cfgen/random.hpp"

using namespace cfgen;
using namespace cfgen::propensity;
using scm::WindowSample;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

WindowSample window1(double x, int a, int traj) {
  WindowSample s;
  s.y = {0.0};
  s.a = {a};
  s.x = {x};
  s.trajectory = traj;
  s.end = 0;
  return s;
}

std::vector<WindowSample> simulate_windows(int d, const scm::ScmCoefficients& c, int n, int T, std::uint64_t seed) {
  scm::ScmConfig cfg;
  cfg.d = d;
  cfg.T = T;
  cfg.n_traj = n;
  cfg.seed = seed;
  auto trajs = scm::simulate_dataset(cfg, c);
  return scm::windowize(trajs, d);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return percentile(v, 50.0);
}

}  // namespace

TEST_CASE("history-independent treatment: fitted probability is 0.7") {
  auto c = scm::ScmCoefficients::table4(1);
  c.beta = {std::log(0.7 / 0.3), 0.0};
  auto win = simulate_windows(1, c, 400, 50, 3);
  PropensityTrainConfig cfg;
  auto fit = propensity::fit_propensity(win, cfg);
  CHECK(fit.warning.empty());
  for (std::size_t i = 0; i < win.size(); i += 997) CHECK(std::abs(fit.model.probability(win[i], 0) - 0.7) < 0.02);
}

TEST_CASE("separable labels: cross-entropy drops below 0.1") {
  Rng rng = make_stream(5, 0);
  std::vector<WindowSample> win;
  for (int i = 0; i < 4000; ++i) {
    double x = uniform01(rng);
    win.push_back(window1(x, x > 0.5 ? 1 : 0, i));
  }
  PropensityTrainConfig cfg;
  cfg.train.epochs = 60;
  cfg.train.lr = 1e-2;
  auto fit = propensity::fit_propensity(win, cfg);
  CHECK(cross_entropy(fit.model, win) < 0.1);
}

TEST_CASE("single-class labels: model predicts the clamp boundary and warns") {
  std::vector<WindowSample> ones, zeros;
  for (int i = 0; i < 20; ++i) {
    ones.push_back(window1(0.1 * i, 1, i));
    zeros.push_back(window1(0.1 * i, 0, i));
  }
  auto f1 = propensity::fit_propensity(ones, {});
  CHECK(!f1.warning.empty());
  CHECK(f1.model.is_constant());
  CHECK(f1.model.probability(ones[3], 0) == diffgraph::kProbHi);
  auto f0 = propensity::fit_propensity(zeros, {});
  CHECK(f0.model.probability(zeros[3], 0) == diffgraph::kProbLo);
}

TEST_CASE("compute_iptw: uniform assignment over d=3 gives 8") {
  auto model = PropensityModel::constant(3, false, 0.5);
  WindowSample s;
  s.y = {0.0};
  s.a = {1, 0, 1};
  s.x = {0.3, 0.2, 0.1};
  s.a_before = {0, 0};
  s.x_before = {0.0, 0.0};
  CHECK(compute_iptw(model, s) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("compute_iptw: probability-one model gives weight 1") {
  auto model = PropensityModel::constant(1, false, 1.0);
  CHECK(compute_iptw(model, window1(0.0, 1, 0)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("oracle_iptw: d=1 closed forms") {
  auto c = scm::ScmCoefficients::table4(1);  // beta = (-0.5, 0.5)
  CHECK(oracle_iptw(c, window1(0.0, 1, 0)) == doctest::Approx(1.0 / logistic(-0.5)).epsilon(1e-12));
  CHECK(oracle_iptw(c, window1(0.0, 1, 0)) == doctest::Approx(2.6487).epsilon(1e-4));
  CHECK(oracle_iptw(c, window1(0.0, 0, 0)) == doctest::Approx(1.0 / (1.0 - logistic(-0.5))).epsilon(1e-12));
  CHECK(oracle_iptw(c, window1(0.0, 0, 0)) == doctest::Approx(1.6065).epsilon(1e-4));
}

TEST_CASE("fitted weights match oracle weights in median within 5%") {
  for (int d : {1, 3}) {
    auto c = scm::ScmCoefficients::table4(d);
    auto win = simulate_windows(d, c, 400, 100, 8);
    PropensityTrainConfig cfg;
    auto fit = propensity::fit_propensity(win, cfg);
    auto w = compute_iptw(fit.model, win);
    auto o = oracle_iptw(scm::Dynamics(c, d), win);
    std::vector<double> ratio(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) ratio[i] = w[i] / o[i];
    CHECK(std::abs(median(ratio) - 1.0) < 0.05);
    CHECK(std::abs(median(w) / median(o) - 1.0) < 0.05);
  }
}

TEST_CASE("no confounding: oracle weights depend only on the window") {
  auto c = scm::ScmCoefficients::table4(3);
  c.beta = {-0.5, 0.5, -0.5, 0.0, 0.0, 0.0};
  auto win = simulate_windows(3, c, 50, 40, 9);
  auto w = oracle_iptw(scm::Dynamics(c, 3), win);
  // the weight still reads pre-window treatments, so group by the full treatment context
  std::map<std::vector<int>, double> seen;
  for (std::size_t i = 0; i < win.size(); ++i) {
    auto key = win[i].a_context();
    auto [it, fresh] = seen.emplace(key, w[i]);
    if (!fresh) REQUIRE(w[i] == doctest::Approx(it->second).epsilon(1e-12));
  }
}

TEST_CASE("weights are positive and finite before and after stabilization") {
  auto c = scm::ScmCoefficients::table4(3);
  auto win = simulate_windows(3, c, 100, 100, 10);
  auto raw = oracle_iptw(scm::Dynamics(c, 3), win);
  auto st = stabilize_weights(raw);
  for (double x : raw) REQUIRE((std::isfinite(x) && x > 0.0));
  for (double x : st) REQUIRE((std::isfinite(x) && x > 0.0));
}

TEST_CASE("percentile uses linear interpolation") {
  std::vector<double> v{4, 1, 3, 2};
  CHECK(percentile(v, 0) == 1.0);
  CHECK(percentile(v, 100) == 4.0);
  CHECK(percentile(v, 25) == doctest::Approx(1.75));
  CHECK(percentile(v, 50) == doctest::Approx(2.5));
  CHECK(percentile(std::vector<double>{7.0}, 99.99) == 7.0);
}

TEST_CASE("stabilize_weights: equal weights become 1, mean is 1") {
  std::vector<double> same(100, 3.7);
  for (double x : stabilize_weights(same)) CHECK(x == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng = make_stream(4, 0);
  std::vector<double> w(5000);
  for (auto& x : w) x = std::exp(2.0 * standard_normal(rng));
  auto st = stabilize_weights(w);
  double m = 0;
  for (double x : st) m += x;
  CHECK(std::abs(m / static_cast<double>(st.size()) - 1.0) < 1e-12);
}

TEST_CASE("stabilize_weights: a single outlier is clamped to the 99.99th percentile") {
  Rng rng = make_stream(6, 0);
  std::vector<double> w(100000);
  for (auto& x : w) x = 1.0 + uniform01(rng);
  w[123] = 1e9;
  WeightConfig cfg;
  cfg.normalize_by_mean = false;
  double hi = percentile(w, 99.99);
  auto st = stabilize_weights(w, cfg);
  CHECK(st[123] == hi);
  CHECK(hi < 1e9);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (i != 123) CHECK(st[i] == std::clamp(w[i], percentile(w, 0.01), hi));
    if (i > 50) break;
  }
}

TEST_CASE("stabilize_weights is idempotent up to renormalization") {
  Rng rng = make_stream(7, 0);
  std::vector<double> w(20000);
  for (auto& x : w) x = std::exp(1.5 * standard_normal(rng));
  auto once = stabilize_weights(w);
  auto twice = stabilize_weights(once);
  // the second pass interpolates against an already-clamped tail, so the
  // bounds can move by a fraction of one order-statistic gap
  for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(twice[i] == doctest::Approx(once[i]).epsilon(1e-4));
  std::vector<double> bounded(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) bounded[i] = 0.5 + static_cast<double>(i % 7);
  auto b1 = stabilize_weights(bounded);
  auto b2 = stabilize_weights(b1);
  for (std::size_t i = 0; i < w.size(); ++i) REQUIRE(b2[i] == doctest::Approx(b1[i]).epsilon(1e-12));
}

TEST_CASE("weight config validation") {
  WeightConfig bad{50.0, 10.0, true};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  WeightConfig neg{-1.0, 10.0, true};
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("discrete toy: oracle-weighted windows match the counterfactual pmf") {
  auto spec = scm::DiscreteToySpec::confounded();
  int n_traj = (200000 + spec.T - spec.d) / (spec.T - spec.d + 1);
  auto trajs = scm::simulate_discrete_toy(spec, n_traj, 77);
  auto win = scm::windowize(trajs, spec.d);
  REQUIRE(win.size() >= 200000);
  auto w = oracle_iptw(scm::Dynamics(spec.coeffs, spec.d), win);
  for (const auto& combo : scm::all_combos(spec.d)) {
    std::vector<double> ys, ws;
    for (std::size_t i = 0; i < win.size(); ++i) {
      if (win[i].a != combo) continue;
      ys.push_back(win[i].y[0]);
      ws.push_back(w[i]);
    }
    auto exact = scm::enumerate_counterfactual_discrete(spec, combo);
    double weighted = scm::total_variation(scm::empirical_pmf(ys, ws), exact);
    INFO("combo " << scm::combo_label(combo));
    CHECK(weighted <= 0.02);
  }
}

TEST_CASE("no confounding on the discrete toy: weighted and unweighted conditionals coincide") {
  auto spec = scm::DiscreteToySpec::confounded();
  spec.coeffs.beta = {-1.0, 0.5, 0.0, 0.0};
  auto trajs = scm::simulate_discrete_toy(spec, 3000, 78);
  auto win = scm::windowize(trajs, spec.d);
  auto w = oracle_iptw(scm::Dynamics(spec.coeffs, spec.d), win);
  for (const auto& combo : scm::all_combos(spec.d)) {
    std::vector<double> ys, ws;
    for (std::size_t i = 0; i < win.size(); ++i) {
      // window weights still vary with the pre-window treatment; fix it
      if (win[i].a != combo || win[i].a_before != std::vector<int>{0}) continue;
      ys.push_back(win[i].y[0]);
      ws.push_back(w[i]);
    }
    CHECK(scm::total_variation(scm::empirical_pmf(ys, ws), scm::empirical_pmf(ys)) < 1e-12);
  }
}

TEST_CASE("binary cross-entropy gradient check") {
  Rng rng = make_stream(8, 0);
  diffgraph::Mlp net({3, 5, 5, 1}, diffgraph::Activation::relu, diffgraph::Activation::sigmoid, rng);
  Matrix x(12, 3), y(12, 1);
  for (int i = 0; i < 12; ++i) {
    for (int k = 0; k < 3; ++k) x(i, k) = standard_normal(rng);
    y(i, 0) = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  }
  diffgraph::LossFn loss = [&](diffgraph::Graph& g, std::span<const diffgraph::Var> p) {
    auto prob = net.forward(g.constant(x), p);
    auto ll = g.constant(y) * diffgraph::log(prob) +
              g.constant(Matrix::Ones(12, 1) - y) * diffgraph::log(1.0 * (-prob) + 1.0);
    return -diffgraph::mean(ll);
  };
  auto rep = diffgraph::check_gradient(loss, net.parameters());
  INFO(rep.worst);
  CHECK(rep.max_relative_error < 1e-4);
}

TEST_CASE("propensity checkpoint and weights CSV round trip") {
  auto c = scm::ScmCoefficients::table4(3);
  auto win = simulate_windows(3, c, 40, 30, 12);
  PropensityTrainConfig cfg;
  cfg.train.epochs = 2;
  auto fit = propensity::fit_propensity(win, cfg);
  auto back = PropensityModel::from_json(nlohmann::json::parse(fit.model.to_json().dump()));
  auto a = compute_iptw(fit.model, win), b = compute_iptw(back, win);
  CHECK(a == b);

  auto path = std::filesystem::temp_directory_path() / "cfgen_weights.csv";
  write_weights_csv(path, a);
  CHECK(read_weights_csv(path) == a);
  std::filesystem::remove(path);
}

TEST_CASE("fitting is deterministic given the seed") {
  auto c = scm::ScmCoefficients::table4(1);
  auto win = simulate_windows(1, c, 100, 30, 13);
  PropensityTrainConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.seed = 5;
  auto a = propensity::fit_propensity(win, cfg);
  auto b = propensity::fit_propensity(win, cfg);
  CHECK(a.model.to_json() == b.model.to_json());
}
