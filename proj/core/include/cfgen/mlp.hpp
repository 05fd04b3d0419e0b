#pragma once

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfgen/diffgraph.hpp"
#include "cfgen/random.hpp"

namespace cfgen::diffgraph {

enum class Activation { identity, relu, gelu, sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(std::string_view name);

/// Probability outputs are kept strictly inside (0, 1).
inline constexpr double kProbLo = 1e-7;
inline constexpr double kProbHi = 1.0 - 1e-7;

/// Fully-connected network. Layer l computes act(x * W_l + b_l) with W_l of
/// shape (in x out), so a batch is a matrix with one sample per row.
/// Sigmoid outputs are clamped to [kProbLo, kProbHi].
class Mlp {
 public:
  Mlp() = default;
  /// Glorot-uniform weights, zero biases.
  Mlp(std::vector<int> layer_dims, Activation hidden, Activation output, Rng& rng);

  static Mlp from_parameters(std::vector<int> layer_dims, Activation hidden, Activation output,
                             std::span<const Matrix> params);

  const std::vector<int>& layer_dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }

  /// Flat parameter list [W0, b0, W1, b1, ...]; biases are 1 x out rows.
  std::vector<Matrix> parameters() const;
  void set_parameters(std::span<const Matrix> params);
  std::size_t parameter_tensors() const { return 2 * weights_.size(); }

  Eigen::VectorXd forward(std::span<const double> input) const;
  Matrix forward_batch(const Matrix& inputs) const;
  /// Differentiable forward pass using `params` (same layout as parameters()).
  Var forward(Var input, std::span<const Var> params) const;

  bool all_finite() const;

  /// {"layer_dims", "activations": [hidden, output], "weights": [[row-major]], "biases": [[...]]}
  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  void check_shapes() const;

  std::vector<int> dims_;
  Activation hidden_ = Activation::relu;
  Activation output_ = Activation::identity;
  std::vector<Matrix> weights_;
  std::vector<Matrix> biases_;
};

}  // namespace cfgen::diffgraph
