#include "cfgen/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace cfgen::gen {

namespace {

std::vector<int> widths(int in, int out, const DiffusionConfig& cfg) {
  std::vector<int> dims{in};
  for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(out);
  return dims;
}

// Constant part of the network input for each row: y_s, null flag, step features.
struct InputParts {
  Matrix y_s;
  Matrix flag;
  Matrix steps;
};

InputParts make_parts(const DiffusionModel& model, const Matrix& y_s, const std::vector<int>& step,
                      const std::vector<bool>& drop) {
  const Eigen::Index n = y_s.rows();
  const int dim = model.config().embedding_dim;
  InputParts p{y_s, Matrix(n, 1), Matrix(n, 1 + dim)};
  int cached = -1;
  std::vector<double> e;
  for (Eigen::Index i = 0; i < n; ++i) {
    p.flag(i, 0) = drop[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    const int s = step[static_cast<std::size_t>(i)];
    if (s != cached) {
      e = step_embedding(s, model.schedule().steps(), dim);
      cached = s;
    }
    for (int k = 0; k <= dim; ++k) p.steps(i, k) = e[static_cast<std::size_t>(k)];
  }
  return p;
}

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) m(0, static_cast<Eigen::Index>(k)) = v[k];
  return m;
}

}  // namespace

NoiseSchedule NoiseSchedule::from_gamma(std::vector<double> gamma) {
  NoiseSchedule s;
  s.gamma = std::move(gamma);
  double bar = 1.0;
  for (double g : s.gamma) {
    s.lambda.push_back(1.0 - g);
    bar *= 1.0 - g;
    s.lambda_bar.push_back(bar);
  }
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::linear(int steps, double gamma_start, double gamma_end) {
  if (steps < 1) throw ConfigError("diffusion needs at least one step");
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (int s = 0; s < steps; ++s) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(s) / static_cast<double>(steps - 1);
    g[static_cast<std::size_t>(s)] = gamma_start + f * (gamma_end - gamma_start);
  }
  return from_gamma(std::move(g));
}

void NoiseSchedule::validate() const {
  if (gamma.empty()) throw ConfigError("empty noise schedule");
  double prev = 1.0;
  for (std::size_t s = 0; s < gamma.size(); ++s) {
    if (!(gamma[s] > 0.0 && gamma[s] < 1.0)) throw ConfigError("noise schedule entries must lie in (0, 1)");
    if (!(lambda_bar[s] < prev)) throw ConfigError("lambda_bar must strictly decrease");
    prev = lambda_bar[s];
  }
}

void DiffusionConfig::validate() const {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(guidance_w >= 0.0)) throw ConfigError("guidance_w must be >= 0");
  if (!(p_uncond >= 0.0 && p_uncond < 1.0)) throw ConfigError("p_uncond must lie in [0, 1)");
  if (!(gamma_start > 0.0 && gamma_start <= gamma_end && gamma_end < 1.0))
    throw ConfigError("need 0 < gamma_start <= gamma_end < 1");
  if (embedding_dim < 0 || embedding_dim % 2 != 0) throw ConfigError("embedding_dim must be even and >= 0");
  if (hidden_width < 1 || hidden_layers < 0) throw ConfigError("invalid diffusion network size");
}

nlohmann::json DiffusionConfig::to_json() const {
  return {{"S", steps},
          {"gamma_start", gamma_start},
          {"gamma_end", gamma_end},
          {"guidance_w", guidance_w},
          {"p_uncond", p_uncond},
          {"embedding_dim", embedding_dim},
          {"hidden_width", hidden_width},
          {"hidden_layers", hidden_layers},
          {"standardize", standardize}};
}

DiffusionConfig DiffusionConfig::from_json(const nlohmann::json& j) {
  DiffusionConfig c;
  c.steps = j.value("S", c.steps);
  c.gamma_start = j.value("gamma_start", c.gamma_start);
  c.gamma_end = j.value("gamma_end", c.gamma_end);
  c.guidance_w = j.value("guidance_w", c.guidance_w);
  c.p_uncond = j.value("p_uncond", c.p_uncond);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.standardize = j.value("standardize", c.standardize);
  c.validate();
  return c;
}

std::vector<double> forward_noise(std::span<const double> y0, int s, const NoiseSchedule& schedule,
                                  std::span<const double> noise) {
  if (s < 1 || s > schedule.steps()) throw std::out_of_range("forward_noise: step outside 1..S");
  if (y0.size() != noise.size()) throw std::invalid_argument("forward_noise: noise dimension");
  const double lb = schedule.lambda_bar[static_cast<std::size_t>(s - 1)];
  const double a = std::sqrt(lb);
  const double b = std::sqrt(1.0 - lb);
  std::vector<double> out(y0.size());
  for (std::size_t k = 0; k < y0.size(); ++k) out[k] = a * y0[k] + b * noise[k];
  return out;
}

std::vector<double> step_embedding(int s, int steps, int dim) {
  const double u = static_cast<double>(s) / static_cast<double>(steps);
  std::vector<double> e{u};
  double freq = std::numbers::pi;
  for (int k = 0; k < dim / 2; ++k, freq *= 2.0) {
    e.push_back(std::sin(freq * u));
    e.push_back(std::cos(freq * u));
  }
  return e;
}

DiffusionModel::DiffusionModel(int m, int cond_dim, const DiffusionConfig& cfg, Rng& rng)
    : m_(m), cond_dim_(cond_dim), cfg_(cfg), scaler_(OutcomeScaler::identity(m)) {
  cfg_.validate();
  if (m < 1 || cond_dim < 1) throw ConfigError("diffusion model needs m >= 1 and a non-empty condition");
  schedule_ = NoiseSchedule::linear(cfg.steps, cfg.gamma_start, cfg.gamma_end);
  net_ = Mlp(widths(input_dim(), m, cfg), diffgraph::Activation::gelu, diffgraph::Activation::identity, rng);
  null_ = Matrix::Zero(1, cond_dim);
}

int DiffusionModel::input_dim() const { return m_ + cond_dim_ + 1 + 1 + cfg_.embedding_dim; }

std::vector<Matrix> DiffusionModel::parameters() const {
  std::vector<Matrix> out = net_.parameters();
  out.push_back(null_);
  return out;
}

void DiffusionModel::set_parameters(std::span<const Matrix> params) {
  const std::size_t nn = net_.parameter_tensors();
  if (params.size() != nn + 1) throw ConfigError("DiffusionModel::set_parameters: wrong tensor count");
  net_.set_parameters(params.subspan(0, nn));
  if (params[nn].rows() != 1 || params[nn].cols() != cond_dim_) throw ConfigError("null embedding shape");
  null_ = params[nn];
}

Matrix DiffusionModel::predict_noise(const Matrix& y_s, int s, const Matrix& cond, const std::vector<bool>& drop) const {
  const Eigen::Index n = y_s.rows();
  if (y_s.cols() != m_ || cond.cols() != cond_dim_ || cond.rows() != n || drop.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("predict_noise: inconsistent shapes");
  }
  const std::vector<int> step(static_cast<std::size_t>(n), s);
  const InputParts p = make_parts(*this, y_s, step, drop);
  Matrix in(n, input_dim());
  Matrix c = cond;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (drop[static_cast<std::size_t>(i)]) c.row(i) = null_.row(0);
  }
  in << p.y_s, c, p.flag, p.steps;
  return net_.forward_batch(in);
}

Matrix DiffusionModel::guided_noise(const Matrix& y_s, int s, const Matrix& cond, double w) const {
  const auto n = static_cast<std::size_t>(y_s.rows());
  const Matrix eps_c = predict_noise(y_s, s, cond, std::vector<bool>(n, false));
  if (w == 0.0) return eps_c;
  const Matrix eps_u = predict_noise(y_s, s, cond, std::vector<bool>(n, true));
  return (w + 1.0) * eps_c - w * eps_u;
}

nlohmann::json DiffusionModel::to_json() const {
  return {{"m", m_},
          {"cond_dim", cond_dim_},
          {"config", cfg_.to_json()},
          {"schedule", schedule_.gamma},
          {"net", net_.to_json()},
          {"null_embedding", std::vector<double>(null_.data(), null_.data() + null_.size())},
          {"scaler", scaler_.to_json()}};
}

DiffusionModel DiffusionModel::from_json(const nlohmann::json& j) {
  try {
    DiffusionModel model;
    model.m_ = j.at("m").get<int>();
    model.cond_dim_ = j.at("cond_dim").get<int>();
    model.cfg_ = DiffusionConfig::from_json(j.at("config"));
    model.schedule_ = NoiseSchedule::from_gamma(j.at("schedule").get<std::vector<double>>());
    model.net_ = Mlp::from_json(j.at("net"));
    const auto null = j.at("null_embedding").get<std::vector<double>>();
    if (static_cast<int>(null.size()) != model.cond_dim_ || model.net_.input_dim() != model.input_dim() ||
        model.net_.output_dim() != model.m_) {
      throw ConfigError("diffusion checkpoint: shapes are inconsistent");
    }
    model.null_ = row_matrix(null);
    model.scaler_ = OutcomeScaler::from_json(j.at("scaler"));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("diffusion checkpoint: ") + e.what());
  }
}

DiffusionDraw draw_diffusion_noise(const DiffusionModel& model, std::size_t rows, Rng& rng) {
  const int S = model.schedule().steps();
  const int m = model.m();
  DiffusionDraw d{std::vector<int>(rows), std::vector<bool>(rows), Matrix(static_cast<Eigen::Index>(rows), m)};
  for (std::size_t i = 0; i < rows; ++i) {
    d.step[i] = 1 + std::min(S - 1, static_cast<int>(uniform01(rng) * S));
    d.drop[i] = uniform01(rng) < model.config().p_uncond;
    for (int k = 0; k < m; ++k) d.eps(static_cast<Eigen::Index>(i), k) = standard_normal(rng);
  }
  return d;
}

Var diffusion_loss_rows(const DiffusionModel& model, Graph& g, std::span<const Var> params, const Matrix& y,
                        const Matrix& cond, const DiffusionDraw& draw) {
  const std::size_t nn = model.net().parameter_tensors();
  if (params.size() != nn + 1) throw std::invalid_argument("diffusion_loss_rows: wrong parameter count");
  const Eigen::Index n = y.rows();
  if (y.cols() != model.m() || cond.cols() != model.cond_dim() || cond.rows() != n || draw.eps.rows() != n) {
    throw std::invalid_argument("diffusion_loss_rows: inconsistent shapes");
  }
  Matrix y_s(n, model.m());
  Matrix keep(n, 1);
  Matrix dropped(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lb = model.schedule().lambda_bar[static_cast<std::size_t>(draw.step[static_cast<std::size_t>(i)] - 1)];
    y_s.row(i) = std::sqrt(lb) * y.row(i) + std::sqrt(1.0 - lb) * draw.eps.row(i);
    const bool drop = draw.drop[static_cast<std::size_t>(i)];
    keep(i, 0) = drop ? 0.0 : 1.0;
    dropped(i, 0) = drop ? 1.0 : 0.0;
  }
  const InputParts p = make_parts(model, y_s, draw.step, draw.drop);
  Var c = scale_rows(g.constant(cond), g.constant(keep)) +
          scale_rows(repeat_row(params[nn], n), g.constant(dropped));
  const Var parts[] = {g.constant(p.y_s), c, g.constant(p.flag), g.constant(p.steps)};
  Var pred = model.net().forward(hconcat(parts), params.subspan(0, nn));
  return row_sum(square(g.constant(draw.eps) - pred));
}

double diffusion_loss(const DiffusionModel& model, std::span<const double> y, std::span<const double> cond, Rng& rng) {
  const DiffusionDraw draw = draw_diffusion_noise(model, 1, rng);
  Graph g;
  std::vector<Var> params;
  for (auto& p : model.parameters()) params.push_back(g.constant(std::move(p)));
  return diffusion_loss_rows(model, g, params, row_matrix(y), row_matrix(cond), draw).scalar();
}

Matrix diffusion_sample(const DiffusionModel& model, std::span<const double> cond, std::size_t n, std::uint64_t seed) {
  if (static_cast<int>(cond.size()) != model.cond_dim()) throw std::invalid_argument("diffusion_sample: condition width");
  return diffusion_sample(model, row_matrix(cond).replicate(static_cast<Eigen::Index>(n), 1), seed);
}

Matrix diffusion_sample(const DiffusionModel& model, const Matrix& c, std::uint64_t seed) {
  if (c.cols() != model.cond_dim()) throw std::invalid_argument("diffusion_sample: condition width");
  const int m = model.m();
  const Eigen::Index N = c.rows();
  const auto n = static_cast<std::size_t>(N);
  if (n == 0) return Matrix(0, m);
  std::vector<Rng> streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams.push_back(make_stream(seed, i));
  Matrix y(N, m);
  for (Eigen::Index i = 0; i < N; ++i) {
    for (int k = 0; k < m; ++k) y(i, k) = standard_normal(streams[static_cast<std::size_t>(i)]);
  }
  const NoiseSchedule& sch = model.schedule();
  for (int s = sch.steps(); s >= 1; --s) {
    const auto k = static_cast<std::size_t>(s - 1);
    const Matrix eps = model.guided_noise(y, s, c, model.config().guidance_w);
    y = (y - (sch.gamma[k] / std::sqrt(1.0 - sch.lambda_bar[k])) * eps) / std::sqrt(sch.lambda[k]);
    if (s > 1) {
      const double sd = std::sqrt(sch.gamma[k]);
      for (Eigen::Index i = 0; i < N; ++i) {
        for (int j = 0; j < m; ++j) y(i, j) += sd * standard_normal(streams[static_cast<std::size_t>(i)]);
      }
    }
  }
  return model.scaler().inverse(y);
}

}  // namespace cfgen::gen
