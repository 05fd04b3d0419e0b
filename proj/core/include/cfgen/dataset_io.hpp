#pragma once

// JSON-lines trajectory files. Line 1 is a header object
// {"d", "T", "m", "seed", "coeffs", ...}; every further line is one
// trajectory {"i", "x", "a", "y", "v"}.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cfgen/scm.hpp"

namespace cfgen::scm {

struct DatasetHeader {
  int d = 1;
  int T = 0;
  int m = 1;
  std::uint64_t seed = 0;
  ScmCoefficients coeffs;
  /// Anything else worth keeping with the data (toy spec, static covariate).
  nlohmann::json extra = nlohmann::json::object();
};

struct Dataset {
  DatasetHeader header;
  std::vector<Trajectory> trajectories;
};

void write_dataset(const std::filesystem::path& path, const Dataset& data);
/// Throws DataError with the offending line number on malformed input.
Dataset read_dataset(const std::filesystem::path& path);

}  // namespace cfgen::scm
