#include "cshap/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "cshap/error.hpp"

namespace cshap {

double median_pairwise_distance(const Eigen::MatrixXd& rows) {
  const int n = static_cast<int>(rows.rows());
  if (n < 2) return 1.0;
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) dists.push_back((rows.row(i) - rows.row(j)).norm());
  auto mid = dists.begin() + dists.size() / 2;
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  return med > 0.0 ? med : 1.0;
}

KernelSpec resolve_bandwidth(KernelSpec spec, const Eigen::MatrixXd& rows) {
  if (spec.needs_bandwidth()) spec.bandwidth = median_pairwise_distance(rows);
  return spec;
}

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) fail(ErrorKind::config, "kernel_eval: width mismatch");
  switch (spec.kind) {
    case KernelSpec::Kind::linear:
      return a.dot(b);
    case KernelSpec::Kind::gaussian: {
      if (spec.bandwidth <= 0.0)
        fail(ErrorKind::config, "kernel_eval: gaussian kernel needs a resolved bandwidth");
      double d2 = (a - b).squaredNorm();
      return std::exp(-d2 / (2.0 * spec.bandwidth * spec.bandwidth));
    }
  }
  fail(ErrorKind::config, "kernel_eval: unknown kernel kind");
}

Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::MatrixXd& rows) {
  const int n = static_cast<int>(rows.rows());
  Eigen::MatrixXd g(n, n);
  if (spec.kind == KernelSpec::Kind::linear) {
    g = rows * rows.transpose();
    return g;
  }
  if (spec.bandwidth <= 0.0)
    fail(ErrorKind::config, "gram_matrix: gaussian kernel needs a resolved bandwidth");
  Eigen::VectorXd sq = rows.rowwise().squaredNorm();
  g = -2.0 * (rows * rows.transpose());
  g.colwise() += sq;
  g.rowwise() += sq.transpose();
  g = (-g / (2.0 * spec.bandwidth * spec.bandwidth)).array().exp();
  // Squared distances via the expanded form can go slightly negative; keep
  // the diagonal exact.
  g.diagonal().setOnes();
  return g;
}

Eigen::VectorXd kernel_column(const KernelSpec& spec, const Eigen::MatrixXd& rows,
                              const Eigen::VectorXd& x) {
  const int n = static_cast<int>(rows.rows());
  Eigen::VectorXd k(n);
  for (int i = 0; i < n; ++i) k[i] = kernel_eval(spec, rows.row(i).transpose(), x);
  return k;
}

}  // namespace cshap
