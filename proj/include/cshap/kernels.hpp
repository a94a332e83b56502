#pragma once

#include <Eigen/Dense>

namespace cshap {

struct KernelSpec {
  enum class Kind { gaussian, linear };
  Kind kind = Kind::gaussian;
  // Gaussian width; <= 0 selects the median heuristic at fit time.
  double bandwidth = 0.0;

  static KernelSpec gaussian_median() { return {Kind::gaussian, 0.0}; }
  static KernelSpec gaussian(double bw) { return {Kind::gaussian, bw}; }
  static KernelSpec linear() { return {Kind::linear, 0.0}; }

  bool needs_bandwidth() const { return kind == Kind::gaussian && bandwidth <= 0.0; }
};

// Median pairwise Euclidean distance; 1.0 when all points coincide.
double median_pairwise_distance(const Eigen::MatrixXd& rows);

// Returns the spec with an explicit bandwidth (median heuristic if needed).
KernelSpec resolve_bandwidth(KernelSpec spec, const Eigen::MatrixXd& rows);

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& a, const Eigen::VectorXd& b);

Eigen::MatrixXd gram_matrix(const KernelSpec& spec, const Eigen::MatrixXd& rows);

// Vector (K(row_i, x))_i.
Eigen::VectorXd kernel_column(const KernelSpec& spec, const Eigen::MatrixXd& rows,
                              const Eigen::VectorXd& x);

}  // namespace cshap
