#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cshap/dataset.hpp"
#include "cshap/learners.hpp"

namespace cshap {

// Coalition weight |S|! (p - |S| - 1)! / p! for a coalition of size s,
// evaluated in log-space.
double shapley_weight(int p, int s);

// val(x, y; S) = loss(y, baseline) - loss(y, model_S(x_S)). Exactly zero for
// the empty coalition.
double coalition_value(const ModalityLayout& layout, const Task& task,
                       const Eigen::VectorXd& x, double y, std::uint32_t mask,
                       const ModelCache& cache);

// All 2^p coalition values at one observation; index = bitmask.
std::vector<double> coalition_values_all(const ModalityLayout& layout, const Task& task,
                                         const Eigen::VectorXd& x, double y,
                                         const ModelCache& cache);

// Exact Shapley value of modality j at dataset row `row`, by enumeration of
// all 2^(p-1) coalitions excluding j.
double instance_shapley(const MultimodalDataset& ds, int row, int modality,
                        const ModelCache& cache);

struct ShapleyTable {
  Eigen::MatrixXd values;      // m x p, entry (i, j) = phi_j at calibration row i
  std::vector<int> index_map;  // calibration row -> dataset row
};

// Table over the calibration split (Algorithm 1) or over arbitrary rows.
ShapleyTable shapley_table(const MultimodalDataset& ds, const SplitIndices& splits,
                           const ModelCache& cache, int threads = 0);
ShapleyTable shapley_table_rows(const MultimodalDataset& ds, const std::vector<int>& rows,
                                const ModelCache& cache, int threads = 0);

// CSV export: rows = calibration points, columns = modalities.
void save_shapley_csv(const ShapleyTable& table, const std::filesystem::path& path);

// Per-modality mean and empirical quantiles (marginal-distribution summary).
nlohmann::json shapley_summary(const ShapleyTable& table);

}  // namespace cshap
