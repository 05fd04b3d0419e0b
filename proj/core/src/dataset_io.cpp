#include "cfgen/dataset_io.hpp"

#include <fstream>
#include <sstream>
#include <string>

#include "cfgen/text.hpp"

namespace cfgen::scm {

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  const auto& h = data.header;
  nlohmann::json head{{"d", h.d}, {"T", h.T}, {"m", h.m}, {"seed", h.seed}, {"coeffs", h.coeffs.to_json()}};
  for (const auto& [k, v] : h.extra.items()) head[k] = v;
  std::ostringstream os;
  os << head.dump() << '\n';
  for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
    const Trajectory& tr = data.trajectories[i];
    nlohmann::json line{{"i", i}, {"x", tr.x}, {"a", tr.a}, {"y", tr.y}};
    line["v"] = tr.v ? nlohmann::json(*tr.v) : nlohmann::json(nullptr);
    os << line.dump() << '\n';
  }
  text::write_text(path, os.str());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("dataset file not found: " + path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        auto& h = ds.header;
        h.d = j.at("d").get<int>();
        h.T = j.at("T").get<int>();
        h.m = j.at("m").get<int>();
        h.seed = j.at("seed").get<std::uint64_t>();
        h.coeffs = ScmCoefficients::from_json(j.at("coeffs"));
        for (const auto& [k, v] : j.items()) {
          if (k != "d" && k != "T" && k != "m" && k != "seed" && k != "coeffs") h.extra[k] = v;
        }
        have_header = true;
        continue;
      }
      Trajectory tr;
      tr.x = j.at("x").get<std::vector<double>>();
      tr.a = j.at("a").get<std::vector<int>>();
      tr.y = j.at("y").get<std::vector<std::vector<double>>>();
      if (j.contains("v") && !j.at("v").is_null()) tr.v = j.at("v").get<double>();
      if (tr.x.size() != tr.a.size() || tr.y.size() != tr.a.size()) throw DataError("ragged trajectory");
      for (int a : tr.a) {
        if (a != 0 && a != 1) throw DataError("treatment outside {0, 1}");
      }
      for (const auto& y : tr.y) {
        if (static_cast<int>(y.size()) != ds.header.m) throw DataError("outcome dimension differs from header m");
      }
      ds.trajectories.push_back(std::move(tr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
  }
  if (!have_header) throw DataError("dataset file has no header: " + path.string());
  return ds;
}

}  // namespace cfgen::scm
