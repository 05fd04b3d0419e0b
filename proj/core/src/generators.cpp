#include "cfgen/generators.hpp"

#include <cmath>

#include "cfgen/text.hpp"

namespace cfgen::gen {

// ---- conditioning ---------------------------------------------------------

Matrix condition_matrix(std::span<const scm::WindowSample> samples, bool with_v) {
  if (samples.empty()) return Matrix(0, 0);
  const int d = samples.front().d();
  Matrix c(static_cast<Eigen::Index>(samples.size()), d + (with_v ? 1 : 0));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.d() != d) throw DataError("condition_matrix: windows of different lengths");
    const auto row = static_cast<Eigen::Index>(i);
    for (int k = 0; k < d; ++k) c(row, k) = s.a[static_cast<std::size_t>(k)];
    if (with_v) {
      if (!s.v) throw DataError("condition_matrix: sample " + std::to_string(i) + " has no static covariate");
      c(row, d) = *s.v;
    }
  }
  return c;
}

Matrix condition_rows(std::span<const int> a_bar, std::optional<double> v, bool with_v, std::size_t n) {
  const auto d = static_cast<Eigen::Index>(a_bar.size());
  Matrix c(static_cast<Eigen::Index>(n), d + (with_v ? 1 : 0));
  for (Eigen::Index k = 0; k < d; ++k) c.col(k).setConstant(a_bar[static_cast<std::size_t>(k)]);
  if (with_v) {
    if (!v) throw ConfigError("this model is conditioned on a static covariate; pass v");
    c.col(d).setConstant(*v);
  }
  return c;
}

Matrix outcome_matrix(std::span<const scm::WindowSample> samples) {
  if (samples.empty()) return Matrix(0, 0);
  const auto m = static_cast<Eigen::Index>(samples.front().y.size());
  Matrix y(static_cast<Eigen::Index>(samples.size()), m);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<Eigen::Index>(samples[i].y.size()) != m) throw DataError("outcome_matrix: ragged outcomes");
    for (Eigen::Index k = 0; k < m; ++k) y(static_cast<Eigen::Index>(i), k) = samples[i].y[static_cast<std::size_t>(k)];
  }
  return y;
}

OutcomeScaler OutcomeScaler::identity(int m) {
  return {std::vector<double>(static_cast<std::size_t>(m), 0.0), std::vector<double>(static_cast<std::size_t>(m), 1.0)};
}

OutcomeScaler OutcomeScaler::fit(const Matrix& y) {
  OutcomeScaler s = identity(static_cast<int>(y.cols()));
  if (y.rows() == 0) return s;
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    const double mu = y.col(k).mean();
    const double sd = std::sqrt((y.col(k).array() - mu).square().mean());
    s.mean[static_cast<std::size_t>(k)] = mu;
    s.scale[static_cast<std::size_t>(k)] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

Matrix OutcomeScaler::transform(const Matrix& y) const {
  Matrix z = y;
  for (Eigen::Index k = 0; k < z.cols(); ++k) {
    z.col(k).array() = (z.col(k).array() - mean[static_cast<std::size_t>(k)]) / scale[static_cast<std::size_t>(k)];
  }
  return z;
}

Matrix OutcomeScaler::inverse(const Matrix& z) const {
  Matrix y = z;
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    y.col(k).array() = y.col(k).array() * scale[static_cast<std::size_t>(k)] + mean[static_cast<std::size_t>(k)];
  }
  return y;
}

nlohmann::json OutcomeScaler::to_json() const { return {{"mean", mean}, {"scale", scale}}; }

OutcomeScaler OutcomeScaler::from_json(const nlohmann::json& j) {
  OutcomeScaler s{j.at("mean").get<std::vector<double>>(), j.at("scale").get<std::vector<double>>()};
  if (s.mean.size() != s.scale.size()) throw ConfigError("outcome scaler: length mismatch");
  return s;
}

// ---- kinds and specs ------------------------------------------------------

std::string to_string(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::mscvae:
      return "mscvae";
    case GeneratorKind::msdiffusion:
      return "msdiffusion";
    case GeneratorKind::cvae_unweighted:
      return "cvae";
    case GeneratorKind::diffusion_unweighted:
      return "diffusion";
  }
  return "mscvae";
}

GeneratorKind generator_kind_from_string(std::string_view name) {
  if (name == "mscvae") return GeneratorKind::mscvae;
  if (name == "msdiffusion") return GeneratorKind::msdiffusion;
  if (name == "cvae" || name == "cvae_unweighted") return GeneratorKind::cvae_unweighted;
  if (name == "diffusion" || name == "diffusion_unweighted") return GeneratorKind::diffusion_unweighted;
  throw ConfigError("unknown generator kind '" + std::string(name) + "'");
}

bool is_weighted(GeneratorKind k) { return k == GeneratorKind::mscvae || k == GeneratorKind::msdiffusion; }
bool is_diffusion(GeneratorKind k) {
  return k == GeneratorKind::msdiffusion || k == GeneratorKind::diffusion_unweighted;
}

GeneratorSpec GeneratorSpec::defaults(GeneratorKind kind, int d, int m) {
  GeneratorSpec s;
  s.kind = kind;
  if (is_diffusion(kind)) {
    s.train.epochs = 50;
    s.train.lr = 1e-4;
  } else {
    s.train.epochs = 100;
    s.train.lr = 1e-3;
  }
  s.train.batch_size = 256;
  s.cvae.r = (d <= 3 && m == 1) ? 5 : 10;
  return s;
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"lr", train.lr},
          {"lr_factor", train.lr_factor},
          {"lr_divisions", train.lr_divisions},
          {"seed", train.seed},
          {"normalize_weights", normalize_weights},
          {"cvae", cvae.to_json()},
          {"diffusion", diffusion.to_json()}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.kind = generator_kind_from_string(j.at("kind").get<std::string>());
  s.train.epochs = j.value("epochs", s.train.epochs);
  s.train.batch_size = j.value("batch_size", s.train.batch_size);
  s.train.lr = j.value("lr", s.train.lr);
  s.train.lr_factor = j.value("lr_factor", s.train.lr_factor);
  s.train.lr_divisions = j.value("lr_divisions", s.train.lr_divisions);
  s.train.seed = j.value("seed", s.train.seed);
  s.normalize_weights = j.value("normalize_weights", s.normalize_weights);
  if (j.contains("cvae")) s.cvae = CvaeConfig::from_json(j.at("cvae"));
  if (j.contains("diffusion")) s.diffusion = DiffusionConfig::from_json(j.at("diffusion"));
  s.train.validate();
  return s;
}

// ---- model wrapper --------------------------------------------------------

GeneratorModel::GeneratorModel(GeneratorKind kind, int d, bool with_v, std::variant<CvaeModel, DiffusionModel> model)
    : kind_(kind), d_(d), with_v_(with_v), model_(std::move(model)) {
  if (is_diffusion(kind) != std::holds_alternative<DiffusionModel>(model_)) {
    throw ConfigError("generator kind does not match the model type");
  }
}

int GeneratorModel::m() const {
  return std::visit([](const auto& mdl) { return mdl.m(); }, model_);
}

Matrix GeneratorModel::generate(std::span<const int> a_bar, std::optional<double> v, std::size_t n,
                                std::uint64_t seed) const {
  if (static_cast<int>(a_bar.size()) != d_) throw ConfigError("treatment window must have length d");
  return generate_rows(condition_rows(a_bar, v, with_v_, n), seed);
}

Matrix GeneratorModel::generate_rows(const Matrix& cond, std::uint64_t seed) const {
  if (is_diffusion(kind_)) return diffusion_sample(diffusion(), cond, seed);
  return cvae_generate(cvae(), cond, seed);
}

nlohmann::json GeneratorModel::to_json() const {
  nlohmann::json j{{"kind", to_string(kind_)}, {"d", d_}, {"with_v", with_v_}};
  if (is_diffusion(kind_)) {
    const auto& mdl = diffusion();
    j["S"] = mdl.schedule().steps();
    j["guidance_w"] = mdl.config().guidance_w;
    j["schedule"] = mdl.schedule().gamma;
    j["model"] = mdl.to_json();
  } else {
    j["r"] = cvae().r();
    j["model"] = cvae().to_json();
  }
  return j;
}

GeneratorModel GeneratorModel::from_json(const nlohmann::json& j) {
  try {
    const GeneratorKind kind = generator_kind_from_string(j.at("kind").get<std::string>());
    const int d = j.at("d").get<int>();
    const bool with_v = j.at("with_v").get<bool>();
    if (is_diffusion(kind)) return GeneratorModel(kind, d, with_v, DiffusionModel::from_json(j.at("model")));
    return GeneratorModel(kind, d, with_v, CvaeModel::from_json(j.at("model")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator checkpoint: ") + e.what());
  }
}

// ---- training -------------------------------------------------------------

TrainedGenerator train_generator(const GeneratorSpec& spec, std::span<const scm::WindowSample> samples,
                                 std::span<const double> weights, const GeneratorHook& hook) {
  if (samples.empty()) throw DataError("train_generator: no samples");
  if (is_weighted(spec.kind) && weights.size() != samples.size()) {
    throw DataError("train_generator: " + std::to_string(weights.size()) + " weights for " +
                    std::to_string(samples.size()) + " samples");
  }
  spec.train.validate();
  const int d = samples.front().d();
  const bool with_v = samples.front().v.has_value();
  const Matrix cond = condition_matrix(samples, with_v);
  const Matrix y_raw = outcome_matrix(samples);
  const int m = static_cast<int>(y_raw.cols());

  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(samples.size()));
  if (is_weighted(spec.kind)) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) throw DataError("train_generator: weights must be positive");
      w(static_cast<Eigen::Index>(i)) = weights[i];
    }
    if (spec.normalize_weights) w /= w.mean();
  }

  Rng init = make_stream(spec.train.seed, 0x1a17);
  const bool diffusion = is_diffusion(spec.kind);
  GeneratorModel model = diffusion ? GeneratorModel(spec.kind, d, with_v, DiffusionModel(m, static_cast<int>(cond.cols()), spec.diffusion, init))
                                   : GeneratorModel(spec.kind, d, with_v, CvaeModel(m, static_cast<int>(cond.cols()), spec.cvae, init));
  const bool standardize = diffusion ? spec.diffusion.standardize : spec.cvae.standardize;
  const OutcomeScaler scaler = standardize ? OutcomeScaler::fit(y_raw) : OutcomeScaler::identity(m);
  if (diffusion) {
    model.diffusion().scaler() = scaler;
  } else {
    model.cvae().scaler() = scaler;
  }
  const Matrix y = scaler.transform(y_raw);

  std::vector<Matrix> params = diffusion ? model.diffusion().parameters() : model.cvae().parameters();

  const auto gather = [&](std::span<const std::size_t> rows, Matrix& yb, Matrix& cb, Matrix& wb) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    yb.resize(n, y.cols());
    cb.resize(n, cond.cols());
    wb.resize(n, 1);
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(r)]);
      yb.row(r) = y.row(i);
      cb.row(r) = cond.row(i);
      wb(r, 0) = w(i);
    }
  };

  diffgraph::BatchLoss loss;
  if (diffusion) {
    loss = [&](Graph& g, std::span<const Var> p, std::span<const std::size_t> rows, Rng& rng) {
      Matrix yb, cb, wb;
      gather(rows, yb, cb, wb);
      const DiffusionDraw draw = draw_diffusion_noise(model.diffusion(), rows.size(), rng);
      return mean(scale_rows(diffusion_loss_rows(model.diffusion(), g, p, yb, cb, draw), g.constant(wb)));
    };
  } else {
    loss = [&](Graph& g, std::span<const Var> p, std::span<const std::size_t> rows, Rng& rng) {
      Matrix yb, cb, wb;
      gather(rows, yb, cb, wb);
      Matrix noise(yb.rows(), model.cvae().r());
      for (Eigen::Index i = 0; i < noise.rows(); ++i) {
        for (Eigen::Index k = 0; k < noise.cols(); ++k) noise(i, k) = standard_normal(rng);
      }
      const ElboVars e = cvae_elbo_rows(model.cvae(), g, p, yb, cb, noise);
      return -mean(scale_rows(e.elbo, g.constant(wb)));
    };
  }

  const auto install = [&](std::span<const Matrix> p) {
    if (diffusion) {
      model.diffusion().set_parameters(p);
    } else {
      model.cvae().set_parameters(p);
    }
  };
  diffgraph::EpochHook epoch_hook;
  if (hook) {
    epoch_hook = [&](int epoch, std::span<const Matrix> p) {
      install(p);
      hook(epoch, model);
    };
  }
  TrainedGenerator out;
  out.trace = diffgraph::train_minibatch(params, samples.size(), spec.train, loss, epoch_hook);
  install(params);
  out.model = std::move(model);
  return out;
}

// ---- sample dumps ---------------------------------------------------------

void write_samples_csv(const std::filesystem::path& path, const SampleSet& samples) {
  Eigen::Index m = samples.empty() ? 1 : samples.begin()->second.cols();
  text::CsvRow header{"combo", "sample_index"};
  for (Eigen::Index k = 0; k < m; ++k) header.push_back("y_" + std::to_string(k));
  std::vector<text::CsvRow> rows;
  for (const auto& [combo, y] : samples) {
    if (y.cols() != m) throw DataError("write_samples_csv: outcome dimension differs between combos");
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      text::CsvRow row{combo, std::to_string(i)};
      for (Eigen::Index k = 0; k < m; ++k) row.push_back(text::format_double(y(i, k)));
      rows.push_back(std::move(row));
    }
  }
  text::write_csv(path, header, rows);
}

SampleSet read_samples_csv(const std::filesystem::path& path) {
  const auto table = text::read_csv(path);
  const std::size_t cc = table.column("combo");
  std::vector<std::size_t> ycols;
  for (std::size_t k = 0;; ++k) {
    const std::string name = "y_" + std::to_string(k);
    bool found = false;
    for (const auto& h : table.header) found = found || h == name;
    if (!found) break;
    ycols.push_back(table.column(name));
  }
  if (ycols.empty()) throw DataError(path.string() + ": no y_ columns");
  std::map<std::string, std::vector<std::vector<double>>> rows;
  for (const auto& r : table.rows) {
    std::vector<double> y;
    for (std::size_t c : ycols) y.push_back(text::parse_double(r[c]));
    rows[r[cc]].push_back(std::move(y));
  }
  SampleSet out;
  for (const auto& [combo, ys] : rows) {
    Matrix mtx(static_cast<Eigen::Index>(ys.size()), static_cast<Eigen::Index>(ycols.size()));
    for (std::size_t i = 0; i < ys.size(); ++i) {
      for (std::size_t k = 0; k < ycols.size(); ++k) mtx(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = ys[i][k];
    }
    out[combo] = std::move(mtx);
  }
  return out;
}

}  // namespace cfgen::gen
