#pragma once

// Inputs shared by the conditional generators: the treatment-window (and
// optional static covariate) encoding, and a per-dimension outcome scaler.

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <vector>

#include "cfgen/diffgraph.hpp"
#include "cfgen/scm.hpp"

namespace cfgen::gen {

using diffgraph::Matrix;

/// Row i = (a_bar of sample i as 0/1 values[, v]).
Matrix condition_matrix(std::span<const scm::WindowSample> samples, bool with_v);
/// n identical rows for one treatment window.
Matrix condition_rows(std::span<const int> a_bar, std::optional<double> v, bool with_v, std::size_t n);
/// Row i = y of sample i.
Matrix outcome_matrix(std::span<const scm::WindowSample> samples);

/// y -> (y - mean) / scale, per column. The identity scaler leaves data as is.
struct OutcomeScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static OutcomeScaler identity(int m);
  static OutcomeScaler fit(const Matrix& y);

  Matrix transform(const Matrix& y) const;
  Matrix inverse(const Matrix& z) const;

  nlohmann::json to_json() const;
  static OutcomeScaler from_json(const nlohmann::json& j);
};

}  // namespace cfgen::gen
