#include "cfgen/cvae.hpp"

#include <cmath>
#include <numbers>

namespace cfgen::gen {

namespace {

std::vector<int> widths(int in, int out, const CvaeConfig& cfg) {
  std::vector<int> dims{in};
  for (int l = 0; l < cfg.hidden_layers; ++l) dims.push_back(cfg.hidden_width);
  dims.push_back(out);
  return dims;
}

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t k = 0; k < v.size(); ++k) m(0, static_cast<Eigen::Index>(k)) = v[k];
  return m;
}

}  // namespace

void CvaeConfig::validate() const {
  if (r < 1) throw ConfigError("latent dimension r must be >= 1");
  if (hidden_width < 1 || hidden_layers < 0) throw ConfigError("invalid CVAE network size");
  if (!(decoder_variance > 0.0)) throw ConfigError("decoder_variance must be positive");
}

nlohmann::json CvaeConfig::to_json() const {
  return {{"r", r},
          {"hidden_width", hidden_width},
          {"hidden_layers", hidden_layers},
          {"decoder_variance", decoder_variance},
          {"decoder_noise", decoder_noise},
          {"standardize", standardize}};
}

CvaeConfig CvaeConfig::from_json(const nlohmann::json& j) {
  CvaeConfig c;
  c.r = j.value("r", c.r);
  c.hidden_width = j.value("hidden_width", c.hidden_width);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  c.decoder_variance = j.value("decoder_variance", c.decoder_variance);
  c.decoder_noise = j.value("decoder_noise", c.decoder_noise);
  c.standardize = j.value("standardize", c.standardize);
  c.validate();
  return c;
}

CvaeModel::CvaeModel(int m, int cond_dim, const CvaeConfig& cfg, Rng& rng)
    : m_(m), cond_dim_(cond_dim), cfg_(cfg), scaler_(OutcomeScaler::identity(m)) {
  cfg_.validate();
  if (m < 1 || cond_dim < 1) throw ConfigError("CVAE needs m >= 1 and a non-empty condition");
  using diffgraph::Activation;
  encoder_ = Mlp(widths(m + cond_dim, 2 * cfg.r, cfg), Activation::relu, Activation::identity, rng);
  prior_ = Mlp(widths(cond_dim, 2 * cfg.r, cfg), Activation::relu, Activation::identity, rng);
  decoder_ = Mlp(widths(cfg.r + cond_dim, m, cfg), Activation::relu, Activation::identity, rng);
}

std::vector<Matrix> CvaeModel::parameters() const {
  std::vector<Matrix> out = encoder_.parameters();
  for (auto& p : prior_.parameters()) out.push_back(std::move(p));
  for (auto& p : decoder_.parameters()) out.push_back(std::move(p));
  return out;
}

void CvaeModel::set_parameters(std::span<const Matrix> params) {
  const std::size_t ne = encoder_.parameter_tensors();
  const std::size_t np = prior_.parameter_tensors();
  const std::size_t nd = decoder_.parameter_tensors();
  if (params.size() != ne + np + nd) throw ConfigError("CvaeModel::set_parameters: wrong tensor count");
  encoder_.set_parameters(params.subspan(0, ne));
  prior_.set_parameters(params.subspan(ne, np));
  decoder_.set_parameters(params.subspan(ne + np, nd));
}

nlohmann::json CvaeModel::to_json() const {
  return {{"m", m_},
          {"cond_dim", cond_dim_},
          {"config", cfg_.to_json()},
          {"encoder", encoder_.to_json()},
          {"prior", prior_.to_json()},
          {"decoder", decoder_.to_json()},
          {"scaler", scaler_.to_json()}};
}

CvaeModel CvaeModel::from_json(const nlohmann::json& j) {
  try {
    CvaeModel model;
    model.m_ = j.at("m").get<int>();
    model.cond_dim_ = j.at("cond_dim").get<int>();
    model.cfg_ = CvaeConfig::from_json(j.at("config"));
    model.encoder_ = Mlp::from_json(j.at("encoder"));
    model.prior_ = Mlp::from_json(j.at("prior"));
    model.decoder_ = Mlp::from_json(j.at("decoder"));
    model.scaler_ = OutcomeScaler::from_json(j.at("scaler"));
    const int r = model.cfg_.r;
    if (model.encoder_.input_dim() != model.m_ + model.cond_dim_ || model.encoder_.output_dim() != 2 * r ||
        model.prior_.input_dim() != model.cond_dim_ || model.prior_.output_dim() != 2 * r ||
        model.decoder_.input_dim() != r + model.cond_dim_ || model.decoder_.output_dim() != model.m_) {
      throw ConfigError("CVAE checkpoint: network shapes are inconsistent");
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("CVAE checkpoint: ") + e.what());
  }
}

ElboVars cvae_elbo_rows(const CvaeModel& model, Graph& g, std::span<const Var> params, const Matrix& y,
                        const Matrix& cond, const Matrix& noise) {
  const std::size_t ne = model.encoder().parameter_tensors();
  const std::size_t np = model.prior().parameter_tensors();
  const std::size_t nd = model.decoder().parameter_tensors();
  if (params.size() != ne + np + nd) throw std::invalid_argument("cvae_elbo_rows: wrong parameter count");
  if (y.cols() != model.m() || cond.cols() != model.cond_dim() || noise.cols() != model.r() ||
      y.rows() != cond.rows() || y.rows() != noise.rows()) {
    throw std::invalid_argument("cvae_elbo_rows: inconsistent input shapes");
  }
  const Eigen::Index r = model.r();
  Var yv = g.constant(y);
  Var cv = g.constant(cond);

  const Var enc_in[] = {yv, cv};
  Var enc = model.encoder().forward(hconcat(enc_in), params.subspan(0, ne));
  Var pri = model.prior().forward(cv, params.subspan(ne, np));
  Var mq = cols(enc, 0, r);
  Var lq = cols(enc, r, r);
  Var mp = cols(pri, 0, r);
  Var lp = cols(pri, r, r);

  // KL(N(mq, e^lq) || N(mp, e^lp)), summed over latent coordinates.
  Var kl = 0.5 * row_sum(lp - lq + exp(lq - lp) + square(mq - mp) * exp(-lp) + (-1.0));

  Var z = mq + exp(0.5 * lq) * g.constant(noise);
  const Var dec_in[] = {z, cv};
  Var mean = model.decoder().forward(hconcat(dec_in), params.subspan(ne + np, nd));
  const double var = model.decoder_variance();
  const double log_norm = 0.5 * static_cast<double>(model.m()) * std::log(2.0 * std::numbers::pi * var);
  Var rec = (-0.5 / var) * row_sum(square(yv - mean)) + (-log_norm);
  return {kl, rec, rec - kl};
}

std::vector<ElboTerms> cvae_elbo_batch(const CvaeModel& model, const Matrix& y, const Matrix& cond,
                                       const Matrix& noise) {
  Graph g;
  std::vector<Var> params;
  for (auto& p : model.parameters()) params.push_back(g.constant(std::move(p)));
  const ElboVars e = cvae_elbo_rows(model, g, params, y, cond, noise);
  std::vector<ElboTerms> out(static_cast<std::size_t>(y.rows()));
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = {e.kl.value()(i, 0), e.reconstruction.value()(i, 0), e.elbo.value()(i, 0)};
  }
  return out;
}

ElboTerms cvae_elbo(const CvaeModel& model, std::span<const double> y, std::span<const double> cond,
                    std::span<const double> noise) {
  const ElboTerms t = cvae_elbo_batch(model, row_matrix(y), row_matrix(cond), row_matrix(noise)).front();
  if (!std::isfinite(t.elbo)) throw TrainingError("cvae_elbo: non-finite value");
  return t;
}

Matrix cvae_generate(const CvaeModel& model, std::span<const double> cond, std::size_t n, std::uint64_t seed) {
  if (static_cast<int>(cond.size()) != model.cond_dim()) throw std::invalid_argument("cvae_generate: condition width");
  return cvae_generate(model, row_matrix(cond).replicate(static_cast<Eigen::Index>(n), 1), seed);
}

Matrix cvae_generate(const CvaeModel& model, const Matrix& cond_rows, std::uint64_t seed) {
  if (cond_rows.cols() != model.cond_dim()) throw std::invalid_argument("cvae_generate: condition width");
  const int r = model.r();
  const int m = model.m();
  const Eigen::Index N = cond_rows.rows();
  if (N == 0) return Matrix(0, m);
  const Matrix prior = model.prior().forward_batch(cond_rows);
  Matrix dec_in(N, r + model.cond_dim());
  Matrix eps(N, m);
  const double sd = model.config().decoder_noise ? std::sqrt(model.decoder_variance()) : 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    Rng rng = make_stream(seed, static_cast<std::uint64_t>(i));
    for (int k = 0; k < r; ++k) dec_in(i, k) = prior(i, k) + std::exp(0.5 * prior(i, r + k)) * standard_normal(rng);
    for (int k = 0; k < m; ++k) eps(i, k) = sd * standard_normal(rng);
  }
  dec_in.rightCols(model.cond_dim()) = cond_rows;
  return model.scaler().inverse(model.decoder().forward_batch(dec_in) + eps);
}

}  // namespace cfgen::gen
