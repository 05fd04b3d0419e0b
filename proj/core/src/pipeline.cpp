#include "cfgen/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "cfgen/dataset_io.hpp"
#include "cfgen/error.hpp"
#include "cfgen/random.hpp"
#include "cfgen/text.hpp"

namespace cfgen::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using diffgraph::Matrix;

PipelineError::PipelineError(std::string stage, const std::string& message)
    : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

namespace {

constexpr const char* kGeneratorKinds[] = {"mscvae", "msdiffusion", "cvae", "diffusion"};
constexpr const char* kBaselineKinds[] = {"kde", "plugin_kde", "msm_nn"};

bool is_generator_kind(const std::string& k) {
  return std::find(std::begin(kGeneratorKinds), std::end(kGeneratorKinds), k) != std::end(kGeneratorKinds);
}

bool is_known_kind(const std::string& k) {
  return is_generator_kind(k) ||
         std::find(std::begin(kBaselineKinds), std::end(kBaselineKinds), k) != std::end(kBaselineKinds);
}

json train_to_json(const diffgraph::TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr},
          {"lr_factor", t.lr_factor}, {"lr_divisions", t.lr_divisions}};
}

void train_from_json(const json& j, diffgraph::TrainConfig& t) {
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.lr = j.value("lr", t.lr);
  t.lr_factor = j.value("lr_factor", t.lr_factor);
  t.lr_divisions = j.value("lr_divisions", t.lr_divisions);
}

MethodConfig default_method(const std::string& kind, int d, int m) {
  if (!is_known_kind(kind)) throw ConfigError("unknown method kind '" + kind + "'");
  MethodConfig mc;
  mc.name = kind;
  mc.kind = kind;
  if (mc.is_generator()) mc.generator = gen::GeneratorSpec::defaults(gen::generator_kind_from_string(kind), d, m);
  return mc;
}

MethodConfig method_from_json(const json& j, int d, int m) {
  if (j.is_string()) return default_method(j.get<std::string>(), d, m);
  if (!j.is_object() || !j.contains("kind")) throw ConfigError("a method needs at least a \"kind\"");
  MethodConfig mc = default_method(j.at("kind").get<std::string>(), d, m);
  mc.name = j.value("name", mc.kind);
  if (mc.is_generator()) {
    json g = mc.generator.to_json();
    json patch = j;
    patch.erase("name");
    patch["kind"] = g["kind"];
    g.merge_patch(patch);
    mc.generator = gen::GeneratorSpec::from_json(g);
  } else if (mc.kind == "msm_nn") {
    mc.msm.hidden_width = j.value("hidden_width", mc.msm.hidden_width);
    mc.msm.hidden_layers = j.value("hidden_layers", mc.msm.hidden_layers);
    train_from_json(j, mc.msm.train);
  } else {
    mc.bandwidth = j.value("bandwidth", mc.bandwidth);
  }
  return mc;
}

json method_to_json(const MethodConfig& mc) {
  json j;
  if (mc.is_generator()) {
    j = mc.generator.to_json();
    j.erase("seed");
  } else if (mc.kind == "msm_nn") {
    j = train_to_json(mc.msm.train);
    j["hidden_width"] = mc.msm.hidden_width;
    j["hidden_layers"] = mc.msm.hidden_layers;
  } else {
    j["bandwidth"] = mc.bandwidth;
  }
  j["name"] = mc.name;
  j["kind"] = mc.kind;
  return j;
}

json static_to_json(const scm::StaticCovariate& s) {
  return {{"enabled", s.enabled}, {"lo", s.lo}, {"hi", s.hi},
          {"coef_x", s.coef_x}, {"coef_a", s.coef_a}, {"coef_y", s.coef_y}};
}

scm::StaticCovariate static_from_json(const json& j) {
  scm::StaticCovariate s;
  if (j.is_boolean()) {
    s.enabled = j.get<bool>();
    return s;
  }
  s.enabled = j.value("enabled", true);
  s.lo = j.value("lo", s.lo);
  s.hi = j.value("hi", s.hi);
  s.coef_x = j.value("coef_x", s.coef_x);
  s.coef_a = j.value("coef_a", s.coef_a);
  s.coef_y = j.value("coef_y", s.coef_y);
  return s;
}

void apply_preset(ScmSection& s, const std::string& name) {
  s.preset = name;
  if (name == "bimodal-toy") {
    s.toy = true;
    s.toy_spec = scm::BimodalToySpec::defaults();
    s.config.d = 3;
    s.config.T = 30;
    s.config.n_traj = 1000;
    s.coeffs = s.toy_spec.dynamics;
    return;
  }
  static const std::map<std::string, int> table4{{"table4-d1", 1}, {"table4-d3", 3}, {"table4-d5", 5}};
  auto it = table4.find(name);
  if (it == table4.end()) throw ConfigError("unknown scm preset '" + name + "'");
  s.toy = false;
  s.config.d = it->second;
  s.config.T = 100;
  s.config.n_traj = 2000;
  s.coeffs = scm::ScmCoefficients::table4(it->second);
}

// Runs one stage and tags any failure with the stage name.
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(name, e.what());
  }
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("missing upstream artifact: " + p.string());
}

std::vector<scm::WindowSample> load_windows(const ExperimentConfig& cfg) {
  fs::path p = cfg.out_dir / files::dataset;
  require(p);
  auto data = scm::read_dataset(p);
  if (data.header.d != cfg.scm.config.d) throw DataError(p.string() + ": dataset d does not match the config");
  return scm::windowize(data.trajectories, data.header.d);
}

std::vector<double> load_weights(const ExperimentConfig& cfg, std::size_t expected) {
  fs::path p = cfg.out_dir / files::weights;
  require(p);
  auto w = propensity::read_weights_csv(p);
  if (w.size() != expected) {
    throw DataError(p.string() + ": " + std::to_string(w.size()) + " weights for " + std::to_string(expected) +
                    " windows");
  }
  return w;
}

std::vector<const MethodConfig*> selected(const ExperimentConfig& cfg, const std::optional<std::string>& only) {
  std::vector<const MethodConfig*> out;
  for (const auto& mc : cfg.methods) {
    if (!only || mc.name == *only) out.push_back(&mc);
  }
  if (only && out.empty()) throw ConfigError("no method named '" + *only + "' in the config");
  return out;
}

bool in_range(const scm::WindowSample& s, const std::optional<std::pair<double, double>>& r) {
  if (!r) return true;
  double v = s.v.value_or(0.0);
  return v >= r->first && v <= r->second;
}

// n static-covariate values spread uniformly over the unit's range.
std::vector<std::optional<double>> draw_v(const EvalUnit& u, std::size_t n, std::uint64_t seed) {
  std::vector<std::optional<double>> v(n);
  if (!u.v_range) return v;
  Rng rng = make_stream(seed, 0x57a7);
  for (auto& x : v) x = u.v_range->first + (u.v_range->second - u.v_range->first) * uniform01(rng);
  return v;
}

Matrix generate_unit(const MethodConfig& mc, const json& model_json, const EvalUnit& u, std::size_t n,
                     std::uint64_t seed, std::span<const scm::WindowSample> windows,
                     std::span<const double> weights, bool with_v) {
  auto v = draw_v(u, n, seed);
  if (mc.is_generator()) {
    auto model = gen::GeneratorModel::from_json(model_json);
    Matrix cond(static_cast<Eigen::Index>(n), model.d() + (with_v ? 1 : 0));
    for (std::size_t i = 0; i < n; ++i) {
      cond.row(static_cast<Eigen::Index>(i)) =
          gen::condition_rows(u.a_bar, v[i], with_v, 1).row(0);
    }
    return model.generate_rows(cond, seed);
  }
  if (mc.kind == "msm_nn") {
    auto model = baselines::MsmRegressor::from_json(model_json.at("model"));
    Matrix out(static_cast<Eigen::Index>(n), model.m());
    for (std::size_t i = 0; i < n; ++i) {
      auto p = model.predict(u.a_bar, v[i]);
      for (int k = 0; k < model.m(); ++k) out(static_cast<Eigen::Index>(i), k) = p[static_cast<std::size_t>(k)];
    }
    return out;
  }
  // KDE keeps no parameters beyond its data; refit on the unit's subgroup.
  std::vector<scm::WindowSample> sub;
  std::vector<double> w;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (!in_range(windows[i], u.v_range)) continue;
    sub.push_back(windows[i]);
    w.push_back(weights[i]);
  }
  bool weighted = mc.kind == "plugin_kde";
  auto kde = baselines::kde_fit(sub, weighted ? std::span<const double>(w) : std::span<const double>{},
                                model_json.value("bandwidth", mc.bandwidth));
  std::string key = scm::combo_label(u.a_bar);
  if (!kde.available(key)) return Matrix(0, kde.m());
  return kde.sample(key, n, seed);
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

}  // namespace

bool MethodConfig::is_generator() const { return is_generator_kind(kind); }

namespace files {
fs::path model(const fs::path& out, const std::string& method) {
  return out / "models" / (safe_name(method) + ".json");
}
fs::path samples(const fs::path& out, const std::string& method) {
  return out / "samples" / (safe_name(method) + ".csv");
}
fs::path histogram(const fs::path& out, const std::string& method, const std::string& label) {
  return out / "histograms" / (safe_name(method) + "_" + safe_name(label) + ".csv");
}
}  // namespace files

// ---- configuration --------------------------------------------------------

ExperimentConfig ExperimentConfig::preset(const std::string& name, std::vector<std::string> methods) {
  ExperimentConfig c;
  apply_preset(c.scm, name);
  for (const auto& k : methods) c.methods.push_back(default_method(k, c.scm.config.d, c.outcome_dim()));
  return c;
}

void ExperimentConfig::validate() const {
  scm.config.validate();
  if (scm.toy) {
    scm.toy_spec.validate(scm.config.d);
  } else {
    scm.coeffs.validate(scm.config.d);
  }
  propensity.weights.validate();
  propensity.train.train.validate();
  if (methods.empty()) throw ConfigError("at least one method is required");
  std::vector<std::string> names;
  for (const auto& mc : methods) {
    if (!is_known_kind(mc.kind)) throw ConfigError("unknown method kind '" + mc.kind + "'");
    if (mc.name.empty()) throw ConfigError("method names must be non-empty");
    if (std::find(names.begin(), names.end(), mc.name) != names.end()) {
      throw ConfigError("duplicate method name '" + mc.name + "'");
    }
    names.push_back(mc.name);
    if (mc.is_generator()) mc.generator.train.validate();
    if (mc.kind == "msm_nn") mc.msm.train.validate();
    if (!(mc.bandwidth > 0.0)) throw ConfigError("kde bandwidth must be positive");
  }
  for (const auto& c : eval.combos) {
    if (static_cast<int>(c.size()) != scm.config.d || c.find_first_not_of("01") != std::string::npos) {
      throw ConfigError("combo '" + c + "' is not a 0/1 string of length d = " + std::to_string(scm.config.d));
    }
  }
  if (eval.oracle_samples == 0 || eval.generated_samples == 0) throw ConfigError("sample counts must be positive");
  if (eval.histogram_bins < 1) throw ConfigError("histogram_bins must be >= 1");
  if (eval.min_observation_share < 0.0 || eval.min_observation_share >= 1.0) {
    throw ConfigError("min_observation_share must lie in [0, 1)");
  }
  for (const auto& g : eval.v_groups) {
    if (!(g.first <= g.second)) throw ConfigError("v group bounds must satisfy lo <= hi");
  }
  if (!eval.v_groups.empty() && !with_v()) throw ConfigError("v groups need the static covariate");
}

json ExperimentConfig::to_json() const {
  json s{{"preset", scm.preset},
         {"d", scm.config.d},
         {"T", scm.config.T},
         {"n_traj", scm.config.n_traj},
         {"beta0_override", scm.config.beta0_override ? json(*scm.config.beta0_override) : json(nullptr)},
         {"static_covariate", static_to_json(scm.config.static_covariate)},
         {"toy", scm.toy}};
  if (scm.toy) {
    s["toy_spec"] = scm.toy_spec.to_json();
  } else {
    s["coefficients"] = scm.coeffs.to_json();
  }
  json p{{"lower_percentile", propensity.weights.lower_percentile},
         {"upper_percentile", propensity.weights.upper_percentile},
         {"normalize_by_mean", propensity.weights.normalize_by_mean},
         {"hidden_width", propensity.train.hidden_width},
         {"hidden_layers", propensity.train.hidden_layers},
         {"oracle_weights", propensity.oracle_weights}};
  p.update(train_to_json(propensity.train.train));
  json methods_j = json::array();
  for (const auto& mc : methods) methods_j.push_back(method_to_json(mc));
  json groups = json::array();
  for (const auto& g : eval.v_groups) groups.push_back({g.first, g.second});
  json e{{"combos", eval.combos.empty() ? json("all") : json(eval.combos)},
         {"oracle_samples", eval.oracle_samples},
         {"generated_samples", eval.generated_samples},
         {"min_observation_share", eval.min_observation_share},
         {"horizon", eval.horizon == scm::Horizon::pooled ? "pooled" : "fixed"},
         {"histogram_bins", eval.histogram_bins},
         {"v_groups", groups}};
  return {{"scm", s}, {"propensity", p}, {"methods", methods_j}, {"eval", e},
          {"seed", seed}, {"out_dir", out_dir.string()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.out_dir = j.value("out_dir", c.out_dir.string());

    const json s = j.value("scm", json::object());
    std::string preset = s.value("preset", std::string("table4-d1"));
    if (!preset.empty()) apply_preset(c.scm, preset);
    c.scm.preset = preset;
    c.scm.config.d = s.value("d", c.scm.config.d);
    c.scm.config.T = s.value("T", c.scm.config.T);
    c.scm.config.n_traj = s.value("n_traj", c.scm.config.n_traj);
    if (s.contains("beta0_override") && !s.at("beta0_override").is_null()) {
      c.scm.config.beta0_override = s.at("beta0_override").get<double>();
    }
    if (s.contains("static_covariate")) c.scm.config.static_covariate = static_from_json(s.at("static_covariate"));
    c.scm.toy = s.value("toy", c.scm.toy);
    if (s.contains("toy_spec")) c.scm.toy_spec = scm::BimodalToySpec::from_json(s.at("toy_spec"));
    if (s.contains("coefficients")) {
      c.scm.coeffs = scm::ScmCoefficients::from_json(s.at("coefficients"));
    } else if (preset.empty() && !c.scm.toy) {
      throw ConfigError("scm needs either a preset or coefficients");
    }
    if (c.scm.toy) c.scm.coeffs = c.scm.toy_spec.dynamics;

    const json p = j.value("propensity", json::object());
    c.propensity.weights.lower_percentile = p.value("lower_percentile", c.propensity.weights.lower_percentile);
    c.propensity.weights.upper_percentile = p.value("upper_percentile", c.propensity.weights.upper_percentile);
    c.propensity.weights.normalize_by_mean = p.value("normalize_by_mean", c.propensity.weights.normalize_by_mean);
    c.propensity.train.hidden_width = p.value("hidden_width", c.propensity.train.hidden_width);
    c.propensity.train.hidden_layers = p.value("hidden_layers", c.propensity.train.hidden_layers);
    c.propensity.oracle_weights = p.value("oracle_weights", c.propensity.oracle_weights);
    train_from_json(p, c.propensity.train.train);

    int d = c.scm.config.d;
    int m = c.outcome_dim();
    for (const auto& mj : j.value("methods", json::array())) c.methods.push_back(method_from_json(mj, d, m));

    const json e = j.value("eval", json::object());
    if (e.contains("combos")) {
      const json& cj = e.at("combos");
      if (!(cj.is_string() && cj.get<std::string>() == "all")) c.eval.combos = cj.get<std::vector<std::string>>();
    }
    c.eval.oracle_samples = e.value("oracle_samples", c.eval.oracle_samples);
    c.eval.generated_samples = e.value("generated_samples", c.eval.generated_samples);
    c.eval.min_observation_share = e.value("min_observation_share", c.eval.min_observation_share);
    std::string horizon = e.value("horizon", std::string("pooled"));
    if (horizon == "pooled") {
      c.eval.horizon = scm::Horizon::pooled;
    } else if (horizon == "fixed") {
      c.eval.horizon = scm::Horizon::fixed;
    } else {
      throw ConfigError("eval.horizon must be 'pooled' or 'fixed'");
    }
    c.eval.histogram_bins = e.value("histogram_bins", c.eval.histogram_bins);
    for (const auto& g : e.value("v_groups", json::array())) {
      c.eval.v_groups.emplace_back(g.at(0).get<double>(), g.at(1).get<double>());
    }
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed experiment config: ") + ex.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(text::read_text(path));
  } catch (const json::exception& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
  return from_json(j);
}

std::vector<EvalUnit> eval_units(const ExperimentConfig& cfg) {
  std::vector<std::string> combos = cfg.eval.combos;
  if (combos.empty()) {
    for (const auto& c : scm::all_combos(cfg.scm.config.d)) combos.push_back(scm::combo_label(c));
  }
  std::vector<std::pair<double, double>> groups = cfg.eval.v_groups;
  if (groups.empty() && cfg.with_v()) {
    groups.emplace_back(cfg.scm.config.static_covariate.lo, cfg.scm.config.static_covariate.hi);
  }
  std::vector<EvalUnit> units;
  for (const auto& c : combos) {
    if (groups.size() <= 1) {
      EvalUnit u{c, scm::parse_combo(c), std::nullopt};
      if (!groups.empty()) u.v_range = groups.front();
      units.push_back(u);
      continue;
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      units.push_back({c + "_v" + std::to_string(g), scm::parse_combo(c), groups[g]});
    }
  }
  return units;
}

scm::Benchmark make_benchmark(const ExperimentConfig& cfg) {
  scm::ScmConfig sc = cfg.scm.config;
  sc.seed = cfg.seed;
  if (cfg.scm.toy) return scm::Benchmark::bimodal(sc, cfg.scm.toy_spec);
  return scm::Benchmark::linear(sc, cfg.scm.coeffs);
}

std::uint64_t task_seed(std::uint64_t seed, const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(seed, h);
}

// ---- stages ---------------------------------------------------------------

void run_simulate(const ExperimentConfig& cfg) {
  stage("simulate", [&] {
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    text::write_text(cfg.out_dir / files::config, cfg.to_json().dump(2) + "\n");
    auto bench = make_benchmark(cfg);
    scm::Dataset data;
    data.header.d = cfg.scm.config.d;
    data.header.T = cfg.scm.config.T;
    data.header.m = bench.m();
    data.header.seed = cfg.seed;
    data.header.coeffs = cfg.scm.coeffs;
    if (cfg.scm.toy) data.header.extra["toy_spec"] = cfg.scm.toy_spec.to_json();
    if (cfg.with_v()) data.header.extra["static_covariate"] = static_to_json(cfg.scm.config.static_covariate);
    data.trajectories = bench.simulate();
    scm::write_dataset(cfg.out_dir / files::dataset, data);
  });
}

void run_fit_propensity(const ExperimentConfig& cfg) {
  stage("fit-propensity", [&] {
    auto windows = load_windows(cfg);
    std::vector<double> raw;
    json model_j;
    if (cfg.propensity.oracle_weights) {
      auto bench = make_benchmark(cfg);
      raw = propensity::oracle_iptw(bench.dynamics(), windows);
      model_j = {{"kind", "oracle"}};
    } else {
      auto pc = cfg.propensity.train;
      pc.train.seed = task_seed(cfg.seed, "propensity");
      auto fit = propensity::fit_propensity(windows, pc);
      raw = propensity::compute_iptw(fit.model, windows);
      model_j = fit.model.to_json();
      if (!fit.warning.empty()) model_j["warning"] = fit.warning;
    }
    text::write_text(cfg.out_dir / files::propensity, model_j.dump() + "\n");
    propensity::write_weights_csv(cfg.out_dir / files::weights,
                                  propensity::stabilize_weights(raw, cfg.propensity.weights));
  });
}

void run_train(const ExperimentConfig& cfg, const std::optional<std::string>& only) {
  stage("train", [&] {
    auto windows = load_windows(cfg);
    auto weights = load_weights(cfg, windows.size());
    for (const MethodConfig* mc : selected(cfg, only)) {
      std::uint64_t seed = task_seed(cfg.seed, "train:" + mc->name);
      json out;
      if (mc->is_generator()) {
        auto spec = mc->generator;
        spec.train.seed = seed;
        auto trained = gen::train_generator(spec, windows, weights);
        out = trained.model.to_json();
        out["epoch_loss"] = trained.trace.epoch_loss;
      } else if (mc->kind == "msm_nn") {
        auto mcfg = mc->msm;
        mcfg.train.seed = seed;
        auto fit = baselines::train_msm_nn(windows, weights, mcfg);
        out = {{"kind", "msm_nn"}, {"model", fit.model.to_json()}, {"epoch_loss", fit.trace.epoch_loss}};
      } else {
        out = {{"kind", mc->kind}, {"bandwidth", mc->bandwidth}};
      }
      text::write_text(files::model(cfg.out_dir, mc->name), out.dump() + "\n");
    }
  });
}

void run_generate(const ExperimentConfig& cfg, std::optional<std::size_t> n, const std::optional<std::string>& only) {
  stage("generate", [&] {
    std::size_t count = n.value_or(cfg.eval.generated_samples);
    if (count == 0) throw ConfigError("sample count must be positive");
    auto units = eval_units(cfg);
    std::vector<scm::WindowSample> windows;
    std::vector<double> weights;
    for (const MethodConfig* mc : selected(cfg, only)) {
      fs::path mp = files::model(cfg.out_dir, mc->name);
      require(mp);
      json model_j = json::parse(text::read_text(mp));
      if (!mc->is_generator() && mc->kind != "msm_nn" && windows.empty()) {
        windows = load_windows(cfg);
        weights = load_weights(cfg, windows.size());
      }
      gen::SampleSet set;
      for (const auto& u : units) {
        std::uint64_t seed = task_seed(cfg.seed, "generate:" + mc->name + ":" + u.label);
        Matrix s = generate_unit(*mc, model_j, u, count, seed, windows, weights, cfg.with_v());
        if (s.rows() > 0) set[u.label] = std::move(s);
      }
      gen::write_samples_csv(files::samples(cfg.out_dir, mc->name), set);
    }
  });
}

eval::MetricsReport run_evaluate(const ExperimentConfig& cfg) {
  return stage("evaluate", [&] {
    auto units = eval_units(cfg);
    auto windows = load_windows(cfg);

    eval::EvalOptions opts;
    opts.min_observation_share = cfg.eval.min_observation_share;
    std::vector<std::string> labels;
    for (const auto& u : units) {
      std::string key = scm::combo_label(u.a_bar);
      std::size_t c = 0;
      for (const auto& w : windows) {
        if (w.a == u.a_bar && in_range(w, u.v_range)) ++c;
      }
      opts.observed_counts[u.label] = c;
      labels.push_back(u.label);
    }

    eval::MethodSamples methods;
    for (const auto& mc : cfg.methods) {
      fs::path sp = files::samples(cfg.out_dir, mc.name);
      require(sp);
      methods[mc.name] = gen::read_samples_csv(sp);
    }

    auto bench = make_benchmark(cfg);
    std::map<std::string, Matrix> oracle_cache;
    for (const auto& u : units) {
      auto draws = bench.counterfactual(u.a_bar, cfg.eval.oracle_samples, task_seed(cfg.seed, "oracle:" + u.label),
                                        cfg.eval.horizon, u.v_range);
      Matrix m(static_cast<Eigen::Index>(draws.size()), bench.m());
      for (std::size_t i = 0; i < draws.size(); ++i) {
        for (int k = 0; k < bench.m(); ++k) m(static_cast<Eigen::Index>(i), k) = draws[i][static_cast<std::size_t>(k)];
      }
      oracle_cache[u.label] = std::move(m);
    }
    eval::OracleSampler oracle = [&](const std::string& label) { return oracle_cache.at(label); };

    auto report = eval::evaluate_all(methods, oracle, labels, opts);
    report.write_csv(cfg.out_dir / files::metrics_csv);
    text::write_text(cfg.out_dir / files::metrics_json, report.summary_json().dump(2) + "\n");
    std::string txt = report.comparison_table();
    for (const auto& w : report.warnings) txt += "warning: " + w + "\n";
    text::write_text(cfg.out_dir / files::report, txt);

    for (const auto& [method, sets] : methods) {
      for (const auto& [label, samples] : sets) {
        auto it = oracle_cache.find(label);
        if (it == oracle_cache.end()) continue;
        eval::write_histogram_csv(files::histogram(cfg.out_dir, method, label), samples, it->second,
                                  cfg.eval.histogram_bins);
      }
    }
    return report;
  });
}

eval::MetricsReport run_report(const std::vector<fs::path>& metrics_files, const fs::path& out_dir) {
  return stage("report", [&] {
    if (metrics_files.empty()) throw ConfigError("report needs at least one metrics file");
    std::vector<eval::MetricsReport> parts;
    for (const auto& p : metrics_files) {
      require(p);
      parts.push_back(eval::MetricsReport::read_csv(p));
    }
    auto merged = eval::merge_reports(parts);
    fs::create_directories(out_dir);
    merged.write_csv(out_dir / files::metrics_csv);
    text::write_text(out_dir / files::metrics_json, merged.summary_json().dump(2) + "\n");
    text::write_text(out_dir / files::report, merged.comparison_table());
    return merged;
  });
}

eval::MetricsReport run_pipeline(const ExperimentConfig& cfg) {
  run_simulate(cfg);
  run_fit_propensity(cfg);
  run_train(cfg);
  run_generate(cfg);
  return run_evaluate(cfg);
}

}  // namespace cfgen::pipeline
