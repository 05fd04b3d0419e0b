#include "cfgen/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace cfgen::diffgraph {

AdamState::AdamState(std::span<const Matrix> params, AdamConfig cfg) : config(cfg) {
  for (const Matrix& p : params) {
    first_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
    second_moment.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void adam_step(AdamState& state, std::vector<Matrix>& params, std::span<const Matrix> grads) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].rows() != params[k].rows() || grads[k].cols() != params[k].cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    if (!grads[k].allFinite()) throw TrainingError("adam_step: non-finite gradient in parameter tensor " + std::to_string(k));
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < grads.size(); ++k) {
    Matrix& m = state.first_moment[k];
    Matrix& v = state.second_moment[k];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[k];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[k].cwiseAbs2();
    params[k].array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
}

double step_lr(double base_lr, int epoch, int epochs, double factor, int divisions) {
  if (epochs <= 0 || divisions <= 0) return base_lr;
  const int period = (epochs + divisions - 1) / divisions;
  return base_lr * std::pow(factor, static_cast<double>(epoch / period));
}

}  // namespace cfgen::diffgraph

namespace cfgen::diffgraph {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lr_factor > 0.0) || lr_divisions < 1) throw ConfigError("invalid learning-rate schedule");
}

TrainTrace train_minibatch(std::vector<Matrix>& params, std::size_t n_rows, const TrainConfig& cfg,
                           const BatchLoss& loss, const EpochHook& hook) {
  cfg.validate();
  if (n_rows == 0) throw DataError("cannot train on an empty dataset");
  Rng rng = make_stream(cfg.seed, 0x7a1);
  AdamState state(params, AdamConfig{cfg.lr});
  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainTrace trace;
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.config.lr = step_lr(cfg.lr, epoch, cfg.epochs, cfg.lr_factor, cfg.lr_divisions);
    // Fisher-Yates with our own draws so the order is platform independent.
    for (std::size_t i = n_rows - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    double total = 0.0;
    std::size_t b = 0;
    for (std::size_t start = 0; start < n_rows; start += batch, ++b) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(batch, n_rows - start));
      try {
        const ValueAndGrad vg = value_and_grad(
            [&](Graph& g, std::span<const Var> p) { return loss(g, p, rows, rng); }, params);
        adam_step(state, params, vg.grads);
        total += vg.value * static_cast<double>(rows.size());
      } catch (const TrainingError& e) {
        throw TrainingError(std::string("training diverged at epoch ") + std::to_string(epoch) + ", batch " +
                            std::to_string(b) + ": " + e.what());
      }
    }
    trace.epoch_loss.push_back(total / static_cast<double>(n_rows));
    if (hook) hook(epoch, params);
  }
  return trace;
}

}  // namespace cfgen::diffgraph
