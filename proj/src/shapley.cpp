#include "cshap/shapley.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cshap/error.hpp"
#include "cshap/parallel.hpp"

namespace cshap {

using nlohmann::json;

double shapley_weight(int p, int s) {
  if (p < 1 || s < 0 || s > p - 1) fail(ErrorKind::config, "shapley_weight: need 0 <= s <= p-1");
  return std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(p - s)) -
                  std::lgamma(p + 1.0));
}

double coalition_value(const ModalityLayout& layout, const Task& task, const Eigen::VectorXd& x,
                       double y, std::uint32_t mask, const ModelCache& cache) {
  if (mask == 0) return 0.0;
  double base = loss(task, y, predict(cache.baseline));
  double with = loss(task, y, predict(cache.at(mask), restrict_features(layout, mask, x)));
  return base - with;
}

std::vector<double> coalition_values_all(const ModalityLayout& layout, const Task& task,
                                         const Eigen::VectorXd& x, double y,
                                         const ModelCache& cache) {
  const std::uint32_t count = 1u << layout.p;
  std::vector<double> vals(count, 0.0);
  double base = loss(task, y, predict(cache.baseline));
  for (std::uint32_t mask = 1; mask < count; ++mask) {
    double with = loss(task, y, predict(cache.at(mask), restrict_features(layout, mask, x)));
    vals[mask] = base - with;
  }
  return vals;
}

namespace {

// phi_j from a precomputed val-by-mask table.
double shapley_from_values(const std::vector<double>& vals, int p, int j,
                           const std::vector<double>& weight_by_size) {
  const std::uint32_t bit = 1u << j;
  const std::uint32_t count = 1u << p;
  double phi = 0.0;
  for (std::uint32_t mask = 0; mask < count; ++mask) {
    if (mask & bit) continue;
    int s = std::popcount(mask);
    phi += weight_by_size[s] * (vals[mask | bit] - vals[mask]);
  }
  return phi;
}

std::vector<double> weights_by_size(int p) {
  std::vector<double> w(p);
  for (int s = 0; s < p; ++s) w[s] = shapley_weight(p, s);
  return w;
}

}  // namespace

double instance_shapley(const MultimodalDataset& ds, int row, int modality,
                        const ModelCache& cache) {
  const int p = ds.layout.p;
  if (modality < 0 || modality >= p) fail(ErrorKind::config, "instance_shapley: bad modality");
  auto vals = coalition_values_all(ds.layout, ds.task, ds.X.row(row).transpose(), ds.y[row], cache);
  return shapley_from_values(vals, p, modality, weights_by_size(p));
}

ShapleyTable shapley_table_rows(const MultimodalDataset& ds, const std::vector<int>& rows,
                                const ModelCache& cache, int threads) {
  const int p = ds.layout.p;
  const int m = static_cast<int>(rows.size());
  ShapleyTable table;
  table.values.resize(m, p);
  table.index_map = rows;
  auto weights = weights_by_size(p);
  parallel_for(0, m, threads, [&](int i) {
    auto vals = coalition_values_all(ds.layout, ds.task, ds.X.row(rows[i]).transpose(),
                                     ds.y[rows[i]], cache);
    for (int j = 0; j < p; ++j) table.values(i, j) = shapley_from_values(vals, p, j, weights);
  });
  return table;
}

ShapleyTable shapley_table(const MultimodalDataset& ds, const SplitIndices& splits,
                           const ModelCache& cache, int threads) {
  return shapley_table_rows(ds, splits.calib, cache, threads);
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

double empirical_quantile(std::vector<double> v, double tau) {
  std::sort(v.begin(), v.end());
  int k = static_cast<int>(v.size());
  int idx = std::clamp(static_cast<int>(std::ceil(tau * k)) - 1, 0, k - 1);
  return v[idx];
}

}  // namespace

void save_shapley_csv(const ShapleyTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ingestion, "cannot write " + path.string());
  out << "row";
  for (int j = 0; j < table.values.cols(); ++j) out << ",phi_" << j;
  out << '\n';
  for (int i = 0; i < table.values.rows(); ++i) {
    out << table.index_map[i];
    for (int j = 0; j < table.values.cols(); ++j) out << ',' << format_double(table.values(i, j));
    out << '\n';
  }
}

json shapley_summary(const ShapleyTable& table) {
  json per_modality = json::array();
  for (int j = 0; j < table.values.cols(); ++j) {
    std::vector<double> col(table.values.rows());
    for (int i = 0; i < table.values.rows(); ++i) col[i] = table.values(i, j);
    json entry;
    entry["modality"] = j;
    entry["mean"] = table.values.col(j).mean();
    json q;
    q["p05"] = empirical_quantile(col, 0.05);
    q["p25"] = empirical_quantile(col, 0.25);
    q["p50"] = empirical_quantile(col, 0.50);
    q["p75"] = empirical_quantile(col, 0.75);
    q["p95"] = empirical_quantile(col, 0.95);
    entry["quantiles"] = q;
    per_modality.push_back(entry);
  }
  json out;
  out["modalities"] = per_modality;
  out["rows"] = table.values.rows();
  return out;
}

}  // namespace cshap
