#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfgen/error.hpp"
#include "cfgen/pipeline.hpp"

using namespace cfgen;
using namespace cfgen::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cfgen_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough to run every stage in a few seconds.
ExperimentConfig small_config(const fs::path& out) {
  auto j = ExperimentConfig::preset("table4-d1", {"mscvae"}).to_json();
  j["scm"]["n_traj"] = 60;
  j["scm"]["T"] = 30;
  j["propensity"]["epochs"] = 2;
  j["methods"] = nlohmann::json::array({
      {{"kind", "mscvae"}, {"epochs", 2}},
      {{"kind", "msdiffusion"}, {"epochs", 1}, {"diffusion", {{"S", 20}}}},
      "kde",
      {{"kind", "plugin_kde"}, {"name", "plugin"}, {"bandwidth", 0.25}},
      {{"kind", "msm_nn"}, {"epochs", 2}},
  });
  j["eval"]["oracle_samples"] = 300;
  j["eval"]["generated_samples"] = 200;
  j["seed"] = 17;
  j["out_dir"] = out.string();
  return ExperimentConfig::from_json(j);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CFGEN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("presets") {
  auto d1 = ExperimentConfig::preset("table4-d1");
  CHECK(d1.scm.config.d == 1);
  CHECK(d1.scm.config.T == 100);
  CHECK(d1.scm.config.n_traj == 2000);
  CHECK(eval_units(d1).size() == 2);
  auto d3 = ExperimentConfig::preset("table4-d3", {"mscvae", "cvae"});
  CHECK(eval_units(d3).size() == 8);
  CHECK(d3.methods.size() == 2);
  CHECK(eval_units(d3).front().label == "000");
  auto toy = ExperimentConfig::preset("bimodal-toy");
  CHECK(toy.outcome_dim() == 2);
  CHECK(toy.scm.toy);
  CHECK_THROWS_AS(ExperimentConfig::preset("table4-d2"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::preset("table4-d1", {"gan"}), ConfigError);
}

TEST_CASE("config JSON round trip and method forms") {
  auto cfg = small_config("x");
  REQUIRE(cfg.methods.size() == 5);
  CHECK(cfg.methods[0].generator.train.epochs == 2);
  CHECK(cfg.methods[0].generator.train.lr == 1e-3);  // untouched default
  CHECK(cfg.methods[1].generator.diffusion.steps == 20);
  CHECK(cfg.methods[2].name == "kde");
  CHECK(cfg.methods[3].name == "plugin");
  CHECK(cfg.methods[3].bandwidth == 0.25);
  CHECK(cfg.methods[4].msm.train.epochs == 2);
  auto again = ExperimentConfig::from_json(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("config validation") {
  auto j = small_config("x").to_json();
  j["methods"].push_back("kde");  // duplicate name
  CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ConfigError);
  auto k = small_config("x").to_json();
  k["eval"]["combos"] = {"01"};  // wrong length for d = 1
  CHECK_THROWS_AS(ExperimentConfig::from_json(k).validate(), ConfigError);
}

TEST_CASE("static covariate subgroups give one unit per window and group") {
  auto cfg = ExperimentConfig::preset("table4-d1");
  cfg.scm.config.static_covariate.enabled = true;
  cfg.eval.v_groups = {{-1.0, 0.0}, {0.0, 1.0}};
  auto units = eval_units(cfg);
  REQUIRE(units.size() == 4);
  CHECK(units[0].label == "0_v0");
  CHECK(units[1].label == "0_v1");
  CHECK(units[1].v_range->first == 0.0);
}

TEST_CASE("task seeds are stable and name-specific") {
  CHECK(task_seed(1, "train:mscvae") == task_seed(1, "train:mscvae"));
  CHECK(task_seed(1, "train:mscvae") != task_seed(1, "train:cvae"));
  CHECK(task_seed(1, "train:mscvae") != task_seed(2, "train:mscvae"));
}

TEST_CASE("missing upstream artifacts name the stage and the file") {
  auto dir = scratch("missing");
  auto cfg = small_config(dir);
  try {
    run_train(cfg);
    FAIL("expected a PipelineError");
  } catch (const PipelineError& e) {
    CHECK(e.stage() == "train");
    CHECK(std::string(e.what()).find("missing upstream artifact") != std::string::npos);
  }
  CHECK_THROWS_AS(run_evaluate(cfg), PipelineError);
  fs::remove_all(dir);
}

TEST_CASE("reruns are byte-identical and staged runs match a full run") {
  auto a = scratch("a"), b = scratch("b"), c = scratch("c");
  auto ra = run_pipeline(small_config(a));
  run_pipeline(small_config(b));
  CHECK(slurp(a / files::metrics_csv) == slurp(b / files::metrics_csv));
  CHECK(slurp(files::samples(a, "mscvae")) == slurp(files::samples(b, "mscvae")));
  CHECK(slurp(files::samples(a, "msdiffusion")) == slurp(files::samples(b, "msdiffusion")));

  auto cc = small_config(c);
  run_simulate(cc);
  run_fit_propensity(cc);
  for (const auto& m : cc.methods) run_train(cc, m.name);
  run_generate(cc);
  run_evaluate(cc);
  CHECK(slurp(a / files::metrics_csv) == slurp(c / files::metrics_csv));
  CHECK(slurp(a / files::weights) == slurp(c / files::weights));

  for (const char* m : {"mscvae", "msdiffusion", "kde", "plugin", "msm_nn"}) {
    INFO(m);
    CHECK(ra.find(m, "w1") != nullptr);
    CHECK(fs::exists(files::model(a, m)));
    CHECK(fs::exists(files::histogram(a, m, "1")));
  }
  CHECK(fs::exists(a / files::report));
  CHECK(fs::exists(a / files::metrics_json));
  for (auto& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("a different seed changes the result") {
  auto a = scratch("s1"), b = scratch("s2");
  auto ca = small_config(a), cb = small_config(b);
  cb.seed = 18;
  ca.methods.resize(1);
  cb.methods.resize(1);
  run_pipeline(ca);
  run_pipeline(cb);
  CHECK(slurp(a / files::metrics_csv) != slurp(b / files::metrics_csv));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("generate with an explicit count, and report merging") {
  auto dir = scratch("gen");
  auto cfg = small_config(dir);
  cfg.methods.resize(1);
  run_simulate(cfg);
  run_fit_propensity(cfg);
  run_train(cfg);
  run_generate(cfg, 1000);
  auto s = gen::read_samples_csv(files::samples(dir, "mscvae"));
  REQUIRE(s.size() == 2);
  for (const auto& [label, m] : s) CHECK(m.rows() == 1000);
  run_evaluate(cfg);

  auto other = scratch("gen_other");
  auto cfg2 = small_config(other);
  cfg2.methods = {cfg2.methods[2]};
  run_pipeline(cfg2);
  auto merged_dir = scratch("merged");
  auto merged = run_report({dir / files::metrics_csv, other / files::metrics_csv}, merged_dir);
  CHECK(merged.find("mscvae", "w1") != nullptr);
  CHECK(merged.find("kde", "w1") != nullptr);
  CHECK(fs::exists(merged_dir / files::report));
  for (auto& p : {dir, other, merged_dir}) fs::remove_all(p);
}

TEST_CASE("command-line tool: staged subcommands, reruns and exit codes") {
  auto dir = scratch("cli"), dir2 = scratch("cli2");
  auto cfg = small_config(dir);
  cfg.methods.resize(1);
  const auto cfg_path = dir / "input.json";
  {
    std::ofstream out(cfg_path);
    out << cfg.to_json().dump(2);
  }
  const std::string c = " -c " + cfg_path.string();
  CHECK(run_cli("simulate" + c + " -o " + dir.string()) == 0);
  CHECK(run_cli("fit-propensity -o " + dir.string()) == 0);  // picks up out/config.json
  CHECK(run_cli("train -o " + dir.string() + " --method mscvae") == 0);
  CHECK(run_cli("generate -o " + dir.string() + " -n 500") == 0);
  CHECK(run_cli("evaluate -o " + dir.string()) == 0);
  CHECK(gen::read_samples_csv(files::samples(dir, "mscvae")).begin()->second.rows() == 500);

  CHECK(run_cli("run" + c + " -o " + dir2.string()) == 0);
  CHECK(run_cli("generate -o " + dir2.string() + " -n 500") == 0);
  CHECK(run_cli("evaluate -o " + dir2.string()) == 0);
  CHECK(slurp(dir / files::metrics_csv) == slurp(dir2 / files::metrics_csv));

  auto empty = scratch("cli_empty");
  CHECK(run_cli("train -c " + cfg_path.string() + " -o " + empty.string()) == 1);
  CHECK(run_cli("run -p no-such-preset -o " + empty.string()) != 0);
  CHECK(run_cli("report " + (dir / files::metrics_csv).string() + " -o " + empty.string()) == 0);
  CHECK(fs::exists(empty / files::metrics_csv));
  for (auto& p : {dir, dir2, empty}) fs::remove_all(p);
}
