#include "cfgen/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "cfgen/error.hpp"
#include "cfgen/text.hpp"

namespace cfgen::eval {

namespace {

std::vector<double> column(const Matrix& m, Eigen::Index k) {
  std::vector<double> v(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) v[static_cast<std::size_t>(i)] = m(i, k);
  return v;
}

std::string opt(const std::optional<double>& v) { return v ? text::format_double(*v) : std::string(); }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return text::parse_double(s);
}

}  // namespace

double mean_distance(const Matrix& gen, const Matrix& oracle) {
  if (gen.rows() == 0 || oracle.rows() == 0) throw DataError("mean_distance: empty sample set");
  if (gen.cols() != oracle.cols()) throw DataError("mean_distance: dimension mismatch");
  return (gen.colwise().mean() - oracle.colwise().mean()).norm();
}

double wasserstein1(std::span<const double> gen, std::span<const double> oracle) {
  if (gen.empty() || oracle.empty()) throw DataError("wasserstein1: empty sample set");
  std::vector<double> a(gen.begin(), gen.end());
  std::vector<double> b(oracle.begin(), oracle.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // Integrate |F_a - F_b| over the merged support.
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    const double next = (j == b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (next - prev);
    while (i < a.size() && a[i] == next) ++i;
    while (j < b.size() && b[j] == next) ++j;
    prev = next;
  }
  return total;
}

double wasserstein1(const Matrix& gen, const Matrix& oracle) {
  if (gen.cols() != 1 || oracle.cols() != 1) throw DataError("wasserstein1: scalar outcomes required");
  return wasserstein1(column(gen, 0), column(oracle, 0));
}

double argmax_projector(std::span<const double> y) {
  if (y.empty()) throw DataError("argmax_projector: empty outcome");
  return static_cast<double>(std::max_element(y.begin(), y.end()) - y.begin());
}

double hotspot_fid(const Matrix& gen, const Matrix& oracle, const Projector& projector) {
  if (gen.cols() != oracle.cols()) throw DataError("hotspot_fid: dimension mismatch");
  if (gen.cols() < 2) throw DataError("hotspot_fid: needs outcomes with m >= 2");
  const auto project = [&](const Matrix& m) {
    std::vector<double> out(static_cast<std::size_t>(m.rows()));
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
      out[static_cast<std::size_t>(i)] = projector(row);
    }
    return out;
  };
  return wasserstein1(project(gen), project(oracle));
}

// ---- report ---------------------------------------------------------------

void MetricsReport::recompute_aggregates() {
  aggregates.clear();
  std::vector<std::string> methods;
  for (const auto& r : records) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  for (const auto& method : methods) {
    for (const char* metric : {"mean_dist", "w1", "fid_star"}) {
      Aggregate a{method, metric, 0.0, 0.0, 0};
      for (const auto& r : records) {
        if (r.method != method || !r.available || r.low_support) continue;
        const std::string m(metric);
        const auto& v = m == "mean_dist" ? r.mean_dist : (m == "w1" ? r.w1 : r.fid_star);
        if (!v) continue;
        a.avg += *v;
        a.worst = a.combos == 0 ? *v : std::max(a.worst, *v);
        ++a.combos;
      }
      if (a.combos == 0) continue;
      a.avg /= static_cast<double>(a.combos);
      aggregates.push_back(a);
    }
  }
}

const Aggregate* MetricsReport::find(const std::string& method, const std::string& metric) const {
  for (const auto& a : aggregates) {
    if (a.method == method && a.metric == metric) return &a;
  }
  return nullptr;
}

const ComboRecord* MetricsReport::find_record(const std::string& method, const std::string& combo) const {
  for (const auto& r : records) {
    if (r.method == method && r.combo == combo) return &r;
  }
  return nullptr;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  std::vector<text::CsvRow> rows;
  for (const auto& r : records) {
    rows.push_back({r.method, r.combo, r.available ? "1" : "0", r.low_support ? "1" : "0",
                    std::to_string(r.n_generated), std::to_string(r.n_oracle), opt(r.mean_dist), opt(r.w1),
                    opt(r.fid_star)});
  }
  text::write_csv(path,
                  {"method", "combo", "available", "low_support", "n_generated", "n_oracle", "mean_dist", "w1",
                   "fid_star"},
                  rows);
}

MetricsReport MetricsReport::read_csv(const std::filesystem::path& path) {
  const auto t = text::read_csv(path);
  MetricsReport rep;
  for (const auto& row : t.rows) {
    ComboRecord r;
    r.method = row[t.column("method")];
    r.combo = row[t.column("combo")];
    r.available = row[t.column("available")] == "1";
    r.low_support = row[t.column("low_support")] == "1";
    r.n_generated = static_cast<std::size_t>(text::parse_int(row[t.column("n_generated")]));
    r.n_oracle = static_cast<std::size_t>(text::parse_int(row[t.column("n_oracle")]));
    r.mean_dist = parse_opt(row[t.column("mean_dist")]);
    r.w1 = parse_opt(row[t.column("w1")]);
    r.fid_star = parse_opt(row[t.column("fid_star")]);
    rep.records.push_back(std::move(r));
  }
  rep.recompute_aggregates();
  return rep;
}

nlohmann::json MetricsReport::summary_json() const {
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& a : aggregates) {
    agg[a.method][a.metric] = {{"avg", a.avg}, {"worst", a.worst}, {"combos", a.combos}};
  }
  return {{"aggregates", agg}, {"warnings", warnings}};
}

std::string MetricsReport::comparison_table() const {
  std::vector<std::string> methods;
  for (const auto& a : aggregates) {
    if (std::find(methods.begin(), methods.end(), a.method) == methods.end()) methods.push_back(a.method);
  }
  const char* metrics[] = {"mean_dist", "w1", "fid_star"};
  std::ostringstream os;
  os << "method";
  for (const char* m : metrics) os << " | " << m;
  os << '\n';
  for (const auto& method : methods) {
    os << method;
    for (const char* m : metrics) {
      const Aggregate* a = find(method, m);
      os << " | ";
      if (a) os << text::format_fixed(a->avg, 3) << " (" << text::format_fixed(a->worst, 3) << ")";
      else os << "-";
    }
    os << '\n';
  }
  return os.str();
}

MetricsReport evaluate_all(const MethodSamples& methods, const OracleSampler& oracle,
                           std::span<const std::string> combos, const EvalOptions& options) {
  if (methods.empty()) throw ConfigError("evaluate_all: no methods");
  MetricsReport rep;
  std::size_t total_obs = 0;
  for (const auto& [c, n] : options.observed_counts) total_obs += n;
  std::set<std::string> flagged;
  for (const auto& combo : combos) {
    if (options.min_observation_share <= 0.0 || total_obs == 0) continue;
    const auto it = options.observed_counts.find(combo);
    const double share = it == options.observed_counts.end()
                             ? 0.0
                             : static_cast<double>(it->second) / static_cast<double>(total_obs);
    if (share < options.min_observation_share) {
      flagged.insert(combo);
      rep.warnings.push_back("combo " + combo + " has " + text::format_fixed(100.0 * share, 2) +
                             "% of observed windows; excluded from aggregates");
    }
  }
  for (const auto& combo : combos) {
    const Matrix ref = oracle(combo);
    for (const auto& [method, per_combo] : methods) {
      ComboRecord r;
      r.method = method;
      r.combo = combo;
      r.low_support = flagged.count(combo) != 0;
      r.n_oracle = static_cast<std::size_t>(ref.rows());
      const auto it = per_combo.find(combo);
      if (it == per_combo.end() || it->second.rows() == 0) {
        r.available = false;
        rep.warnings.push_back("method " + method + " has no samples for combo " + combo +
                               "; aggregates use the remaining combos");
        rep.records.push_back(std::move(r));
        continue;
      }
      const Matrix& g = it->second;
      r.n_generated = static_cast<std::size_t>(g.rows());
      r.mean_dist = mean_distance(g, ref);
      if (g.cols() == 1) {
        r.w1 = wasserstein1(g, ref);
      } else {
        r.fid_star = hotspot_fid(g, ref);
      }
      rep.records.push_back(std::move(r));
    }
  }
  rep.recompute_aggregates();
  return rep;
}

MetricsReport merge_reports(std::span<const MetricsReport> reports) {
  MetricsReport out;
  for (const auto& r : reports) {
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
    out.warnings.insert(out.warnings.end(), r.warnings.begin(), r.warnings.end());
  }
  out.recompute_aggregates();
  return out;
}

void write_histogram_csv(const std::filesystem::path& path, const Matrix& gen, const Matrix& oracle, int bins) {
  if (gen.cols() != oracle.cols()) throw DataError("write_histogram_csv: dimension mismatch");
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  std::vector<text::CsvRow> rows;
  for (Eigen::Index k = 0; k < gen.cols(); ++k) {
    double lo = INFINITY;
    double hi = -INFINITY;
    for (const Matrix* m : {&gen, &oracle}) {
      if (m->rows() == 0) continue;
      lo = std::min(lo, m->col(k).minCoeff());
      hi = std::max(hi, m->col(k).maxCoeff());
    }
    if (!std::isfinite(lo)) continue;
    if (hi <= lo) hi = lo + 1.0;
    const double width = (hi - lo) / bins;
    std::vector<std::size_t> cg(static_cast<std::size_t>(bins)), co(static_cast<std::size_t>(bins));
    const auto fill = [&](const Matrix& m, std::vector<std::size_t>& c) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const int b = std::clamp(static_cast<int>((m(i, k) - lo) / width), 0, bins - 1);
        ++c[static_cast<std::size_t>(b)];
      }
    };
    fill(gen, cg);
    fill(oracle, co);
    for (int b = 0; b < bins; ++b) {
      rows.push_back({std::to_string(k), text::format_double(lo + b * width), text::format_double(lo + (b + 1) * width),
                      std::to_string(cg[static_cast<std::size_t>(b)]), std::to_string(co[static_cast<std::size_t>(b)])});
    }
  }
  text::write_csv(path, {"dim", "bin_left", "bin_right", "generated", "oracle"}, rows);
}

}  // namespace cfgen::eval
