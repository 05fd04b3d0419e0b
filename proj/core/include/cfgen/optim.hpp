#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cfgen/diffgraph.hpp"
#include "cfgen/random.hpp"

namespace cfgen::diffgraph {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators shaped like the parameter list they were built for.
struct AdamState {
  AdamState() = default;
  AdamState(std::span<const Matrix> params, AdamConfig cfg);

  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  long step = 0;
};

/// Bias-corrected Adam update, in place. Non-finite gradient entries throw
/// TrainingError before anything is modified.
void adam_step(AdamState& state, std::vector<Matrix>& params, std::span<const Matrix> grads);

/// Step-wise decay: lr * factor^floor(epoch / ceil(epochs / divisions)).
double step_lr(double base_lr, int epoch, int epochs, double factor = 0.5, int divisions = 4);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 256;
  double lr = 1e-3;
  double lr_factor = 0.5;
  int lr_divisions = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Builds the mean loss of one minibatch. `rows` indexes the training set;
/// `rng` is the training stream, for losses that draw noise.
using BatchLoss = std::function<Var(Graph&, std::span<const Var> params, std::span<const std::size_t> rows, Rng& rng)>;
/// Called after every epoch with the current parameters.
using EpochHook = std::function<void(int epoch, std::span<const Matrix> params)>;

struct TrainTrace {
  std::vector<double> epoch_loss;  // row-weighted mean of the batch losses
};

/// Shuffled minibatch Adam with the step-wise learning-rate decay.
/// A non-finite loss or gradient aborts with a TrainingError that names
/// the epoch and batch.
TrainTrace train_minibatch(std::vector<Matrix>& params, std::size_t n_rows, const TrainConfig& cfg,
                           const BatchLoss& loss, const EpochHook& hook = {});

}  // namespace cfgen::diffgraph
