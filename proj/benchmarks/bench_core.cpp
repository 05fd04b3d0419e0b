#include <benchmark/benchmark.h>

#include "cfgen/eval.hpp"
#include "cfgen/generators.hpp"
#include "cfgen/propensity.hpp"
#include "cfgen/random.hpp"
#include "cfgen/scm.hpp"

using namespace cfgen;
using diffgraph::Graph;
using diffgraph::Matrix;
using diffgraph::Var;

namespace {

Matrix normals(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng = make_stream(seed, 0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  return m;
}

}  // namespace

static void BM_Wasserstein1(benchmark::State& state) {
  const auto n = state.range(0);
  Matrix a = normals(n, 1, 1), b = normals(n + 7, 1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(eval::wasserstein1(a, b));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Wasserstein1)->Arg(1000)->Arg(10000)->Arg(100000);

static void BM_SimulateD3(benchmark::State& state) {
  scm::ScmConfig cfg;
  cfg.d = 3;
  cfg.T = 100;
  cfg.n_traj = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(scm::simulate_dataset(cfg, scm::ScmCoefficients::table4(3)));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimulateD3)->Arg(200)->Arg(2000);

static void BM_StabilizeWeights(benchmark::State& state) {
  std::vector<double> w(static_cast<std::size_t>(state.range(0)));
  Rng rng = make_stream(3, 0);
  for (auto& x : w) x = std::exp(standard_normal(rng));
  for (auto _ : state) benchmark::DoNotOptimize(propensity::stabilize_weights(w));
}
BENCHMARK(BM_StabilizeWeights)->Arg(200000);

// One minibatch of the weighted ELBO, forward and backward.
static void BM_ElboStep(benchmark::State& state) {
  Rng rng = make_stream(4, 0);
  gen::CvaeModel model(1, 3, gen::CvaeConfig{}, rng);
  const Eigen::Index n = state.range(0);
  Matrix y = normals(n, 1, 5), cond = normals(n, 3, 6), noise = normals(n, model.r(), 7), w = Matrix::Ones(n, 1);
  diffgraph::LossFn loss = [&](Graph& g, std::span<const Var> p) {
    return -diffgraph::mean(g.constant(w) * gen::cvae_elbo_rows(model, g, p, y, cond, noise).elbo);
  };
  auto params = model.parameters();
  for (auto _ : state) benchmark::DoNotOptimize(diffgraph::value_and_grad(loss, params));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ElboStep)->Arg(256);

static void BM_DiffusionLossStep(benchmark::State& state) {
  Rng rng = make_stream(8, 0);
  gen::DiffusionModel model(2, 3, gen::DiffusionConfig{}, rng);
  const Eigen::Index n = state.range(0);
  Matrix y = normals(n, 2, 9), cond = normals(n, 3, 10), w = Matrix::Ones(n, 1);
  auto draw = gen::draw_diffusion_noise(model, static_cast<std::size_t>(n), rng);
  diffgraph::LossFn loss = [&](Graph& g, std::span<const Var> p) {
    return diffgraph::mean(g.constant(w) * gen::diffusion_loss_rows(model, g, p, y, cond, draw));
  };
  auto params = model.parameters();
  for (auto _ : state) benchmark::DoNotOptimize(diffgraph::value_and_grad(loss, params));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_DiffusionLossStep)->Arg(256);

// Full reverse chain (S = 200 network evaluations, each with guidance).
static void BM_DiffusionSample(benchmark::State& state) {
  Rng rng = make_stream(11, 0);
  gen::DiffusionModel model(1, 3, gen::DiffusionConfig{}, rng);
  std::vector<double> cond{1.0, 0.0, 1.0};
  for (auto _ : state)
    benchmark::DoNotOptimize(gen::diffusion_sample(model, cond, static_cast<std::size_t>(state.range(0)), 12));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DiffusionSample)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
