#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "cfgen/error.hpp"
#include "cfgen/eval.hpp"
#include "cfgen/generators.hpp"
#include "cfgen/propensity.hpp"
#include "cfgen/random.hpp"
#include "cfgen/scm.hpp"

using namespace cfgen;
using namespace cfgen::gen;
using diffgraph::Graph;
using diffgraph::Var;

namespace {

// Output layer of `net` becomes the constant `bias`.
void set_constant_output(Mlp& net, const std::vector<double>& bias) {
  auto p = net.parameters();
  p[p.size() - 2].setZero();
  for (std::size_t k = 0; k < bias.size(); ++k) p.back()(0, static_cast<Eigen::Index>(k)) = bias[k];
  net.set_parameters(p);
}

Matrix normals(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  return m;
}

std::vector<scm::WindowSample> d1_windows(int n_traj, std::uint64_t seed) {
  scm::ScmConfig cfg;
  cfg.d = 1;
  cfg.T = 100;
  cfg.n_traj = n_traj;
  cfg.seed = seed;
  return scm::windowize(scm::simulate_dataset(cfg, scm::ScmCoefficients::table4(1)), 1);
}

double col_mean(const Matrix& m) { return m.col(0).mean(); }

}  // namespace

// ---- CVAE -------------------------------------------------------------------

TEST_CASE("cvae elbo: encoder equal to prior gives zero KL") {
  Rng rng = make_stream(1, 0);
  CvaeConfig cfg;
  cfg.r = 3;
  CvaeModel model(1, 2, cfg, rng);
  std::vector<double> stats{0.3, -0.2, 0.1, -1.0, 0.5, 0.0};
  set_constant_output(model.encoder(), stats);
  set_constant_output(model.prior(), stats);
  std::vector<double> y{0.7}, cond{1.0, 0.0}, noise{0.1, -0.3, 2.0};
  CHECK(std::abs(cvae_elbo(model, y, cond, noise).kl) < 1e-15);
}

TEST_CASE("cvae elbo: KL(N(0,1) || N(1,1)) = 0.5, and a Monte Carlo estimate agrees") {
  Rng rng = make_stream(2, 0);
  CvaeConfig cfg;
  cfg.r = 1;
  CvaeModel model(1, 1, cfg, rng);
  set_constant_output(model.encoder(), {0.0, 0.0});
  set_constant_output(model.prior(), {1.0, 0.0});
  std::vector<double> y{0.0}, cond{1.0}, noise{0.0};
  CHECK(cvae_elbo(model, y, cond, noise).kl == doctest::Approx(0.5).epsilon(1e-14));

  // E_q[log q(z) - log p(z)] with z ~ N(0, 1): log q - log p = (z - 1)^2 / 2 - z^2 / 2
  Rng mc = make_stream(2, 1);
  double acc = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = standard_normal(mc);
    acc += 0.5 * (z - 1) * (z - 1) - 0.5 * z * z;
  }
  CHECK(std::abs(acc / n - 0.5) < 1e-2);
}

TEST_CASE("cvae elbo: exact decoder gives the Gaussian log-density peak") {
  Rng rng = make_stream(3, 0);
  CvaeConfig cfg;
  cfg.r = 2;
  for (int m : {1, 2}) {
    CvaeModel model(m, 1, cfg, rng);
    std::vector<double> y(static_cast<std::size_t>(m), 0.42);
    set_constant_output(model.decoder(), y);
    std::vector<double> cond{1.0}, noise{0.3, -0.8};
    double expected = -0.5 * m * std::log(2 * std::numbers::pi * cfg.decoder_variance);
    CHECK(cvae_elbo(model, y, cond, noise).reconstruction == doctest::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("cvae elbo: batch and graph evaluations agree with the single-sample version") {
  Rng rng = make_stream(4, 0);
  CvaeModel model(2, 3, CvaeConfig{}, rng);
  Matrix y = normals(5, 2, rng), cond = normals(5, 3, rng), noise = normals(5, 5, rng);
  auto batch = cvae_elbo_batch(model, y, cond, noise);
  Graph g;
  std::vector<Var> ps;
  for (const auto& p : model.parameters()) ps.push_back(g.parameter(p));
  auto vars = cvae_elbo_rows(model, g, ps, y, cond, noise);
  for (Eigen::Index i = 0; i < 5; ++i) {
    Eigen::VectorXd yi = y.row(i).transpose(), ci = cond.row(i).transpose(), ni = noise.row(i).transpose();
    auto single = cvae_elbo(model, {yi.data(), 2}, {ci.data(), 3}, {ni.data(), 5});
    CHECK(batch[static_cast<std::size_t>(i)].elbo == doctest::Approx(single.elbo).epsilon(1e-13));
    CHECK(g.value(vars.elbo)(i, 0) == doctest::Approx(single.elbo).epsilon(1e-13));
    CHECK(single.elbo == doctest::Approx(single.reconstruction - single.kl).epsilon(1e-13));
    CHECK(single.kl >= 0.0);
  }
}

TEST_CASE("weighted ELBO gradient check") {
  Rng rng = make_stream(5, 0);
  CvaeConfig cfg;
  cfg.r = 2;
  cfg.hidden_width = 6;
  CvaeModel model(1, 2, cfg, rng);
  Matrix y = normals(7, 1, rng), cond = normals(7, 2, rng), noise = normals(7, 2, rng);
  Matrix w(7, 1);
  for (int i = 0; i < 7; ++i) w(i, 0) = 0.2 + uniform01(rng);
  diffgraph::LossFn loss = [&](Graph& g, std::span<const Var> p) {
    auto v = cvae_elbo_rows(model, g, p, y, cond, noise);
    return -diffgraph::mean(g.constant(w) * v.elbo);
  };
  auto rep = diffgraph::check_gradient(loss, model.parameters());
  INFO(rep.worst);
  CHECK(rep.max_relative_error < 1e-4);
}

TEST_CASE("ELBO stays below the exact log-likelihood at every epoch on a linear-Gaussian toy") {
  // y | a ~ N(a - 0.5, 0.5^2); one observation per window, no confounding.
  Rng rng = make_stream(6, 0);
  std::vector<scm::WindowSample> win;
  double exact = 0;
  const double sd = 0.5;
  for (int i = 0; i < 2000; ++i) {
    scm::WindowSample s;
    int a = uniform01(rng) < 0.5 ? 1 : 0;
    double y = a - 0.5 + sd * standard_normal(rng);
    s.a = {a};
    s.x = {0.0};
    s.y = {y};
    s.trajectory = i;
    win.push_back(s);
    double z = (y - (a - 0.5)) / sd;
    exact += -0.5 * z * z - std::log(sd) - 0.5 * std::log(2 * std::numbers::pi);
  }
  exact /= 2000.0;
  auto spec = GeneratorSpec::defaults(GeneratorKind::cvae_unweighted, 1);
  spec.cvae.standardize = false;
  spec.cvae.r = 2;
  spec.train.epochs = 25;
  Matrix y = outcome_matrix(win), cond = condition_matrix(win, false);
  Rng noise_rng = make_stream(6, 1);
  Matrix noise = normals(2000, 2, noise_rng);
  int epochs_seen = 0;
  double last = -1e300;
  GeneratorHook hook = [&](int, const GeneratorModel& m) {
    auto terms = cvae_elbo_batch(m.cvae(), y, cond, noise);
    double avg = 0;
    for (const auto& t : terms) {
      avg += t.elbo;
      REQUIRE(t.kl >= 0.0);
    }
    avg /= static_cast<double>(terms.size());
    CHECK(avg <= exact + 1e-6);
    last = avg;
    ++epochs_seen;
  };
  std::vector<double> ones(win.size(), 1.0);
  train_generator(spec, win, ones, hook);
  CHECK(epochs_seen == 25);
  CHECK(last > exact - 1.5);  // training actually moved towards the bound
}

TEST_CASE("cvae generation: degenerate prior and no decoder noise give identical draws") {
  Rng rng = make_stream(7, 0);
  CvaeConfig cfg;
  cfg.r = 2;
  cfg.decoder_noise = false;
  CvaeModel model(1, 1, cfg, rng);
  set_constant_output(model.prior(), {0.5, -0.5, -200.0, -200.0});
  std::vector<double> cond{1.0};
  auto s = cvae_generate(model, cond, 50, 3);
  for (Eigen::Index i = 1; i < s.rows(); ++i) CHECK(s(i, 0) == doctest::Approx(s(0, 0)).epsilon(1e-12));
  CHECK(cvae_generate(model, cond, 0, 3).rows() == 0);
  auto again = cvae_generate(model, cond, 50, 3);
  CHECK((again.array() == s.array()).all());
}

TEST_CASE("all-one weights reproduce the unweighted model; weight scale does not matter") {
  auto win = d1_windows(20, 1);
  std::vector<double> ones(win.size(), 1.0), twos(win.size(), 2.0), rnd(win.size());
  Rng rng = make_stream(8, 0);
  for (auto& w : rnd) w = 0.5 + uniform01(rng);
  auto spec = GeneratorSpec::defaults(GeneratorKind::mscvae, 1);
  spec.train.epochs = 2;
  auto unspec = spec;
  unspec.kind = GeneratorKind::cvae_unweighted;
  auto weighted = train_generator(spec, win, ones);
  auto plain = train_generator(unspec, win, rnd);  // unweighted kinds ignore weights
  CHECK(weighted.model.cvae().to_json() == plain.model.cvae().to_json());
  auto doubled = train_generator(spec, win, twos);
  CHECK(doubled.model.cvae().to_json() == weighted.model.cvae().to_json());

  auto dspec = GeneratorSpec::defaults(GeneratorKind::msdiffusion, 1);
  dspec.train.epochs = 1;
  auto dun = dspec;
  dun.kind = GeneratorKind::diffusion_unweighted;
  CHECK(train_generator(dspec, win, ones).model.diffusion().to_json() ==
        train_generator(dun, win, rnd).model.diffusion().to_json());
}

TEST_CASE("mscvae on the d=1 benchmark recovers the counterfactual means") {
  auto win = d1_windows(500, 2);
  auto c = scm::ScmCoefficients::table4(1);
  auto w = propensity::stabilize_weights(propensity::oracle_iptw(scm::Dynamics(c, 1), win));
  auto spec = GeneratorSpec::defaults(GeneratorKind::mscvae, 1);
  spec.train.epochs = 30;
  auto trained = train_generator(spec, win, w);
  scm::ScmConfig cfg;
  cfg.d = 1;
  auto bench = scm::Benchmark::linear(cfg, c);
  for (auto [a, target] : {std::pair{0, -3.0}, std::pair{1, -1.0}}) {
    std::vector<int> abar{a};
    auto gen = trained.model.generate(abar, std::nullopt, 10000, 11);
    CHECK(std::abs(col_mean(gen) - target) < 0.1);
    auto draws = bench.counterfactual(abar, 10000, 12);
    Matrix oracle(10000, 1);
    for (int i = 0; i < 10000; ++i) oracle(i, 0) = draws[static_cast<std::size_t>(i)][0];
    CHECK(eval::wasserstein1(gen, oracle) <= 0.15);
  }
}

TEST_CASE("generator spec defaults and checkpoint round trip") {
  auto s = GeneratorSpec::defaults(GeneratorKind::msdiffusion, 3, 2);
  CHECK(s.train.epochs == 50);
  CHECK(s.train.lr == 1e-4);
  CHECK(s.train.batch_size == 256);
  CHECK(GeneratorSpec::defaults(GeneratorKind::mscvae, 1).cvae.r == 5);
  CHECK(GeneratorSpec::defaults(GeneratorKind::mscvae, 5).cvae.r == 10);
  CHECK(GeneratorSpec::from_json(s.to_json()).to_json() == s.to_json());
  CHECK(generator_kind_from_string("cvae") == GeneratorKind::cvae_unweighted);
  CHECK_THROWS_AS(generator_kind_from_string("gan"), ConfigError);

  auto win = d1_windows(10, 3);
  std::vector<double> ones(win.size(), 1.0);
  for (auto kind : {GeneratorKind::mscvae, GeneratorKind::msdiffusion}) {
    auto spec = GeneratorSpec::defaults(kind, 1);
    spec.train.epochs = 1;
    spec.diffusion.steps = 20;
    auto t = train_generator(spec, win, ones);
    auto back = GeneratorModel::from_json(nlohmann::json::parse(t.model.to_json().dump()));
    std::vector<int> abar{1};
    auto a = t.model.generate(abar, std::nullopt, 20, 4);
    auto b = back.generate(abar, std::nullopt, 20, 4);
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("sample dump CSV round trip") {
  SampleSet s;
  s["01"] = Matrix::Random(4, 2);
  s["10"] = Matrix::Random(3, 2);
  auto path = std::filesystem::temp_directory_path() / "cfgen_samples.csv";
  write_samples_csv(path, s);
  auto back = read_samples_csv(path);
  REQUIRE(back.size() == 2);
  CHECK((back["01"].array() == s["01"].array()).all());
  CHECK((back["10"].array() == s["10"].array()).all());
  std::filesystem::remove(path);
}

TEST_CASE("weight/sample length mismatch is rejected") {
  auto win = d1_windows(2, 4);
  std::vector<double> w(win.size() - 1, 1.0);
  CHECK_THROWS(train_generator(GeneratorSpec::defaults(GeneratorKind::mscvae, 1), win, w));
}

// ---- diffusion --------------------------------------------------------------

TEST_CASE("noise schedule invariants") {
  auto s = NoiseSchedule::linear(200, 1e-4, 0.05);
  CHECK(s.steps() == 200);
  for (int i = 0; i < 200; ++i) {
    CHECK(s.gamma[static_cast<std::size_t>(i)] > 0.0);
    CHECK(s.gamma[static_cast<std::size_t>(i)] < 1.0);
    if (i > 0) CHECK(s.lambda_bar[static_cast<std::size_t>(i)] < s.lambda_bar[static_cast<std::size_t>(i - 1)]);
  }
  CHECK(s.lambda_bar.back() < 0.01);
  CHECK_THROWS_AS(NoiseSchedule::from_gamma({0.1, 1.0}).validate(), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::from_gamma({0.1, 0.0}).validate(), ConfigError);
}

TEST_CASE("forward noise: no accumulated noise returns y0") {
  // not a valid training schedule, only a way to get lambda_bar = 1
  NoiseSchedule s;
  s.gamma = {0.0, 0.5};
  s.lambda = {1.0, 0.5};
  s.lambda_bar = {1.0, 0.5};
  std::vector<double> y0{1.25, -3.0}, eps{0.7, 0.1};
  CHECK(forward_noise(y0, 1, s, eps) == y0);
  auto y2 = forward_noise(y0, 2, s, eps);
  CHECK(y2[0] == doctest::Approx(std::sqrt(0.5) * 1.25 + std::sqrt(0.5) * 0.7));
}

TEST_CASE("forward noise moments: terminal step is close to N(0, 1), variance identity holds") {
  auto sched = NoiseSchedule::linear(200, 1e-4, 0.05);
  Rng rng = make_stream(9, 0);
  const int n = 10000;
  for (int s : {1, 20, 100, 200}) {
    std::vector<double> ys(n);
    for (int i = 0; i < n; ++i) {
      std::vector<double> y0{2.0 + 0.5 * standard_normal(rng)}, eps{standard_normal(rng)};
      ys[static_cast<std::size_t>(i)] = forward_noise(y0, s, sched, eps)[0];
    }
    double m = 0, v = 0;
    for (double y : ys) m += y;
    m /= n;
    for (double y : ys) v += (y - m) * (y - m);
    v /= (n - 1);
    double lb = sched.lambda_bar[static_cast<std::size_t>(s - 1)];
    double target = lb * 0.25 + (1 - lb);
    double se = target * std::sqrt(2.0 / (n - 1));
    INFO("s = " << s);
    CHECK(std::abs(v - target) < 3 * se);
    CHECK(std::abs(m - 2.0 * std::sqrt(lb)) < 3 * std::sqrt(target / n));
  }
}

TEST_CASE("diffusion loss: zero-output network has expected loss m") {
  Rng rng = make_stream(10, 0);
  DiffusionConfig cfg;
  for (int m : {1, 2}) {
    DiffusionModel model(m, 3, cfg, rng);
    set_constant_output(model.net(), std::vector<double>(static_cast<std::size_t>(m), 0.0));
    std::vector<double> y(static_cast<std::size_t>(m), 0.3), cond{1, 0, 1};
    const int n = 10000;
    double acc = 0, acc2 = 0;
    for (int i = 0; i < n; ++i) {
      double l = diffusion_loss(model, y, cond, rng);
      acc += l;
      acc2 += l * l;
    }
    double mean = acc / n, var = acc2 / n - mean * mean;
    CHECK(std::abs(mean - m) < 3 * std::sqrt(var / n));
  }
}

TEST_CASE("diffusion loss rows equal the squared noise-prediction error") {
  Rng rng = make_stream(11, 0);
  DiffusionModel model(2, 3, DiffusionConfig{}, rng);
  Matrix y = normals(6, 2, rng), cond = normals(6, 3, rng);
  auto draw = draw_diffusion_noise(model, 6, rng);
  Graph g;
  std::vector<Var> ps;
  for (const auto& p : model.parameters()) ps.push_back(g.parameter(p));
  Matrix rows = g.value(diffusion_loss_rows(model, g, ps, y, cond, draw));
  for (Eigen::Index i = 0; i < 6; ++i) {
    int s = draw.step[static_cast<std::size_t>(i)];
    Eigen::VectorXd yi = y.row(i).transpose(), ei = draw.eps.row(i).transpose();
    auto ys = forward_noise({yi.data(), 2}, s, model.schedule(), {ei.data(), 2});
    Matrix ysm(1, 2);
    ysm << ys[0], ys[1];
    Matrix pred = model.predict_noise(ysm, s, cond.row(i), {draw.drop[static_cast<std::size_t>(i)]});
    // a network that returned eps exactly would make this zero
    double expected = (draw.eps.row(i) - pred.row(0)).squaredNorm();
    CHECK(rows(i, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("condition dropout frequency follows p_uncond") {
  Rng rng = make_stream(12, 0);
  DiffusionConfig cfg;
  cfg.p_uncond = 0.0;
  DiffusionModel never(1, 2, cfg, rng);
  auto d0 = draw_diffusion_noise(never, 10000, rng);
  CHECK(std::count(d0.drop.begin(), d0.drop.end(), true) == 0);
  cfg.p_uncond = 0.1;
  DiffusionModel some(1, 2, cfg, rng);
  auto d1 = draw_diffusion_noise(some, 10000, rng);
  double share = static_cast<double>(std::count(d1.drop.begin(), d1.drop.end(), true)) / 10000.0;
  CHECK(std::abs(share - 0.1) < 3 * std::sqrt(0.09 / 10000));
  for (int s : d1.step) REQUIRE((s >= 1 && s <= cfg.steps));
}

TEST_CASE("weighted diffusion loss gradient check (net and null embedding)") {
  Rng rng = make_stream(13, 0);
  DiffusionConfig cfg;
  cfg.hidden_width = 6;
  cfg.p_uncond = 0.5;
  DiffusionModel model(2, 2, cfg, rng);
  Matrix y = normals(8, 2, rng), cond = normals(8, 2, rng);
  auto draw = draw_diffusion_noise(model, 8, rng);
  REQUIRE(std::count(draw.drop.begin(), draw.drop.end(), true) > 0);
  Matrix w(8, 1);
  for (int i = 0; i < 8; ++i) w(i, 0) = 0.5 + uniform01(rng);
  diffgraph::LossFn loss = [&](Graph& g, std::span<const Var> p) {
    return diffgraph::mean(g.constant(w) * diffusion_loss_rows(model, g, p, y, cond, draw));
  };
  auto rep = diffgraph::check_gradient(loss, model.parameters());
  INFO(rep.worst);
  CHECK(rep.max_relative_error < 1e-4);
}

TEST_CASE("guided noise: w = 0 is the conditional prediction, and linear in w") {
  Rng rng = make_stream(14, 0);
  DiffusionModel model(2, 3, DiffusionConfig{}, rng);
  Matrix ys = normals(10, 2, rng), cond = normals(10, 3, rng);
  for (int s : {1, 57, 200}) {
    Matrix cond_pred = model.predict_noise(ys, s, cond, std::vector<bool>(10, false));
    Matrix null_pred = model.predict_noise(ys, s, cond, std::vector<bool>(10, true));
    CHECK((model.guided_noise(ys, s, cond, 0.0).array() == cond_pred.array()).all());
    for (double w : {0.5, 2.0, 3.0}) {
      Matrix lin = (w + 1) * cond_pred - w * null_pred;
      CHECK((model.guided_noise(ys, s, cond, w) - lin).cwiseAbs().maxCoeff() < 1e-13);
    }
  }
}

TEST_CASE("diffusion sampling is deterministic and uses per-sample streams") {
  Rng rng = make_stream(15, 0);
  DiffusionConfig cfg;
  cfg.steps = 30;
  DiffusionModel model(2, 1, cfg, rng);
  std::vector<double> cond{1.0};
  Matrix a = diffusion_sample(model, cond, 12, 5);
  Matrix b = diffusion_sample(model, cond, 12, 5);
  Matrix c = diffusion_sample(model, cond, 6, 5);
  CHECK((a.array() == b.array()).all());
  CHECK((a.topRows(6).array() == c.array()).all());
  CHECK(diffusion_sample(model, cond, 0, 5).rows() == 0);
  CHECK(DiffusionModel::from_json(model.to_json()).to_json() == model.to_json());
}

TEST_CASE("diffusion config validation") {
  DiffusionConfig c;
  c.guidance_w = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DiffusionConfig{};
  c.p_uncond = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DiffusionConfig{};
  c.gamma_end = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
