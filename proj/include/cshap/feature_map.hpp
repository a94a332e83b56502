#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cshap/dataset.hpp"

namespace cshap {

// Per-modality linear projection Omega: center each modality block and rotate
// onto its top principal components, then concatenate in modality order.
struct FeatureMap {
  struct Block {
    int in_offset = 0;
    Eigen::VectorXd mean;        // in_dim
    Eigen::MatrixXd loadings;    // in_dim x out_dim, orthonormal columns
    Eigen::VectorXd eigenvalues; // full spectrum, descending (diagnostics)
  };
  std::vector<Block> blocks;

  int in_dim() const;
  int out_dim() const;
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& rows) const;

  // Pass-through map (used when the quantile model runs on raw covariates).
  static FeatureMap identity(int width);
};

// PCA fit on the given rows only (calibration rows in the conformal pipeline,
// so nothing from the training half leaks into the quantile stage).
// d_omega[j] <= dims[j]; needs at least d_omega[j] + 1 rows.
FeatureMap fit_feature_map(const Eigen::MatrixXd& rows, const ModalityLayout& layout,
                           const std::vector<int>& d_omega);

}  // namespace cshap
