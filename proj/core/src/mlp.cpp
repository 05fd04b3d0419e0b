#include "cfgen/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cfgen::diffgraph {

namespace {

constexpr double kGeluC = 0.7978845608028654;

double apply_scalar(Activation a, double v) {
  switch (a) {
    case Activation::identity:
      return v;
    case Activation::relu:
      return v > 0.0 ? v : 0.0;
    case Activation::gelu:
      return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
    case Activation::sigmoid: {
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      return std::clamp(s, kProbLo, kProbHi);
    }
  }
  return v;
}

Var apply_var(Activation a, Var v) {
  switch (a) {
    case Activation::identity:
      return v;
    case Activation::relu:
      return relu(v);
    case Activation::gelu:
      return gelu(v);
    case Activation::sigmoid:
      return sigmoid(v, kProbLo, kProbHi);
  }
  return v;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity:
      return "identity";
    case Activation::relu:
      return "relu";
    case Activation::gelu:
      return "gelu";
    case Activation::sigmoid:
      return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Mlp::Mlp(std::vector<int> layer_dims, Activation hidden, Activation output, Rng& rng)
    : dims_(std::move(layer_dims)), hidden_(hidden), output_(output) {
  if (dims_.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
  for (int w : dims_) {
    if (w <= 0) throw ConfigError("Mlp layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l];
    const int out = dims_[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(in, out);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = (2.0 * uniform01(rng) - 1.0) * limit;
    }
    weights_.push_back(std::move(w));
    biases_.push_back(Matrix::Zero(1, out));
  }
}

Mlp Mlp::from_parameters(std::vector<int> layer_dims, Activation hidden, Activation output,
                         std::span<const Matrix> params) {
  Mlp net;
  net.dims_ = std::move(layer_dims);
  net.hidden_ = hidden;
  net.output_ = output;
  if (net.dims_.size() < 2) throw ConfigError("Mlp needs at least input and output widths");
  net.weights_.resize(net.dims_.size() - 1);
  net.biases_.resize(net.dims_.size() - 1);
  net.set_parameters(params);
  return net;
}

void Mlp::check_shapes() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].rows() != dims_[l] || weights_[l].cols() != dims_[l + 1] || biases_[l].rows() != 1 ||
        biases_[l].cols() != dims_[l + 1]) {
      throw ConfigError("Mlp parameter shapes do not match layer_dims at layer " + std::to_string(l));
    }
  }
}

std::vector<Matrix> Mlp::parameters() const {
  std::vector<Matrix> out;
  out.reserve(2 * weights_.size());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

void Mlp::set_parameters(std::span<const Matrix> params) {
  if (params.size() != 2 * weights_.size()) throw ConfigError("Mlp::set_parameters: wrong tensor count");
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] = params[2 * l];
    biases_[l] = params[2 * l + 1];
  }
  check_shapes();
}

Eigen::VectorXd Mlp::forward(std::span<const double> input) const {
  if (static_cast<int>(input.size()) != input_dim()) {
    throw std::invalid_argument("Mlp::forward: expected input of width " + std::to_string(input_dim()) + ", got " +
                                std::to_string(input.size()));
  }
  Matrix x(1, input_dim());
  for (int j = 0; j < input_dim(); ++j) x(0, j) = input[static_cast<std::size_t>(j)];
  return forward_batch(x).row(0).transpose();
}

Matrix Mlp::forward_batch(const Matrix& inputs) const {
  if (inputs.cols() != input_dim()) {
    throw std::invalid_argument("Mlp::forward_batch: expected " + std::to_string(input_dim()) + " columns, got " +
                                std::to_string(inputs.cols()));
  }
  Matrix h = inputs;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = h * weights_[l];
    z.rowwise() += biases_[l].row(0);
    const Activation act = l + 1 == weights_.size() ? output_ : hidden_;
    if (act == Activation::gelu) {
      // tanh(u) = 1 - 2 / (1 + e^{2u}), on packets; e^{2u} = inf gives 1
      const auto u = kGeluC * (z.array() + 0.044715 * z.array().cube());
      z.array() = 0.5 * z.array() * (2.0 - 2.0 / (1.0 + (2.0 * u).exp()));
    } else if (act != Activation::identity) {
      z = z.unaryExpr([act](double v) { return apply_scalar(act, v); });
    }
    h = std::move(z);
  }
  return h;
}

Var Mlp::forward(Var input, std::span<const Var> params) const {
  if (params.size() != 2 * weights_.size()) throw std::invalid_argument("Mlp::forward: wrong parameter count");
  if (input.cols() != input_dim()) {
    throw std::invalid_argument("Mlp::forward: expected " + std::to_string(input_dim()) + " columns, got " +
                                std::to_string(input.cols()));
  }
  Var h = input;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var z = add_row(matmul(h, params[2 * l]), params[2 * l + 1]);
    h = apply_var(l + 1 == weights_.size() ? output_ : hidden_, z);
  }
  return h;
}

bool Mlp::all_finite() const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
  }
  return true;
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json j;
  j["layer_dims"] = dims_;
  j["activations"] = {to_string(hidden_), to_string(output_)};
  nlohmann::json ws = nlohmann::json::array();
  nlohmann::json bs = nlohmann::json::array();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(weights_[l].size()));
    for (Eigen::Index i = 0; i < weights_[l].rows(); ++i) {
      for (Eigen::Index k = 0; k < weights_[l].cols(); ++k) flat.push_back(weights_[l](i, k));
    }
    ws.push_back(flat);
    std::vector<double> b(biases_[l].data(), biases_[l].data() + biases_[l].size());
    bs.push_back(b);
  }
  j["weights"] = ws;
  j["biases"] = bs;
  return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  try {
    auto dims = j.at("layer_dims").get<std::vector<int>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    if (acts.size() != 2) throw ConfigError("Mlp checkpoint: expected [hidden, output] activations");
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (dims.size() < 2 || ws.size() != dims.size() - 1 || bs.size() != dims.size() - 1) {
      throw ConfigError("Mlp checkpoint: layer count mismatch");
    }
    std::vector<Matrix> params;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const auto flat = ws[l].get<std::vector<double>>();
      const auto b = bs[l].get<std::vector<double>>();
      const auto in = static_cast<std::size_t>(dims[l]);
      const auto out = static_cast<std::size_t>(dims[l + 1]);
      if (flat.size() != in * out || b.size() != out) throw ConfigError("Mlp checkpoint: tensor size mismatch");
      Matrix w(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
      for (std::size_t i = 0; i < in; ++i) {
        for (std::size_t k = 0; k < out; ++k) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = flat[i * out + k];
      }
      Matrix bias(1, static_cast<Eigen::Index>(out));
      for (std::size_t k = 0; k < out; ++k) bias(0, static_cast<Eigen::Index>(k)) = b[k];
      params.push_back(std::move(w));
      params.push_back(std::move(bias));
    }
    return from_parameters(std::move(dims), activation_from_string(acts[0]), activation_from_string(acts[1]), params);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("Mlp checkpoint: ") + e.what());
  }
}

}  // namespace cfgen::diffgraph
