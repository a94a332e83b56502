#include "cshap/feature_map.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>

#include "cshap/error.hpp"

namespace cshap {

int FeatureMap::in_dim() const {
  int w = 0;
  for (const auto& b : blocks) w += static_cast<int>(b.mean.size());
  return w;
}

int FeatureMap::out_dim() const {
  int w = 0;
  for (const auto& b : blocks) w += static_cast<int>(b.loadings.cols());
  return w;
}

Eigen::VectorXd FeatureMap::apply(const Eigen::VectorXd& x) const {
  if (x.size() != in_dim()) fail(ErrorKind::config, "feature map: input width mismatch");
  Eigen::VectorXd out(out_dim());
  int pos = 0;
  for (const auto& b : blocks) {
    const int in = static_cast<int>(b.mean.size());
    const int d = static_cast<int>(b.loadings.cols());
    out.segment(pos, d) = b.loadings.transpose() * (x.segment(b.in_offset, in) - b.mean);
    pos += d;
  }
  return out;
}

Eigen::MatrixXd FeatureMap::apply_rows(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd out(rows.rows(), out_dim());
  for (int i = 0; i < rows.rows(); ++i) out.row(i) = apply(rows.row(i).transpose()).transpose();
  return out;
}

FeatureMap FeatureMap::identity(int width) {
  FeatureMap fm;
  Block b;
  b.in_offset = 0;
  b.mean = Eigen::VectorXd::Zero(width);
  b.loadings = Eigen::MatrixXd::Identity(width, width);
  b.eigenvalues = Eigen::VectorXd::Ones(width);
  fm.blocks.push_back(std::move(b));
  return fm;
}

FeatureMap fit_feature_map(const Eigen::MatrixXd& rows, const ModalityLayout& layout,
                           const std::vector<int>& d_omega) {
  if (static_cast<int>(d_omega.size()) != layout.p)
    fail(ErrorKind::config, "fit_feature_map: d_omega must have one entry per modality");
  if (rows.cols() != layout.width())
    fail(ErrorKind::config, "fit_feature_map: row width does not match layout");

  const int n = static_cast<int>(rows.rows());
  FeatureMap fm;
  for (int j = 0; j < layout.p; ++j) {
    const int dim = layout.dims[j];
    const int d = d_omega[j];
    if (d < 1 || d > dim)
      fail(ErrorKind::config, "fit_feature_map: d_omega[" + std::to_string(j) +
                                  "] must lie in [1, " + std::to_string(dim) + "]");
    if (n < d + 1)
      fail(ErrorKind::config, "fit_feature_map: need at least d_omega + 1 rows for modality " +
                                  std::to_string(j));

    Eigen::MatrixXd block = rows.middleCols(layout.offsets[j], dim);
    Eigen::VectorXd mean = block.colwise().mean();
    Eigen::MatrixXd centered = block.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success)
      fail(ErrorKind::numeric, "fit_feature_map: eigendecomposition failed");

    // Eigen returns ascending order; flip to descending.
    Eigen::VectorXd evals(dim);
    Eigen::MatrixXd evecs(dim, dim);
    for (int c = 0; c < dim; ++c) {
      evals[c] = eig.eigenvalues()[dim - 1 - c];
      evecs.col(c) = eig.eigenvectors().col(dim - 1 - c);
    }

    // A block that is constant on the fit rows projects to zero regardless of
    // the basis; keep the identity loadings so downstream features are well
    // defined (zero-filled modalities stay inert end to end). Partial rank
    // deficiency is an actionable error instead.
    const bool constant_block = evals[0] <= 1e-24 * (1.0 + mean.squaredNorm());
    if (!constant_block && evals[d - 1] <= 1e-12 * evals[0])
      fail(ErrorKind::numeric, "fit_feature_map: modality " + std::to_string(j) +
                                   " is rank deficient below d_omega = " + std::to_string(d) +
                                   "; use a smaller d_omega");
    if (constant_block) evecs = Eigen::MatrixXd::Identity(dim, dim);

    // Deterministic sign: largest-magnitude loading entry is positive.
    for (int c = 0; c < d; ++c) {
      int arg = 0;
      evecs.col(c).cwiseAbs().maxCoeff(&arg);
      if (evecs(arg, c) < 0) evecs.col(c) = -evecs.col(c);
    }

    FeatureMap::Block b;
    b.in_offset = layout.offsets[j];
    b.mean = std::move(mean);
    b.loadings = evecs.leftCols(d);
    b.eigenvalues = std::move(evals);
    fm.blocks.push_back(std::move(b));
  }
  return fm;
}

}  // namespace cshap
