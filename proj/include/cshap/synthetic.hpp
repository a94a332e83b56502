#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "cshap/dataset.hpp"
#include "cshap/rng.hpp"

namespace cshap {

struct SyntheticConfig {
  int p = 10;
  int d = 3;
  int n = 1000;
  double epsilon = 0.0;   // cross-modality dependence, in [0, 1]
  double noise_sd = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticTruth {
  Eigen::VectorXd beta;   // p*d
  double alpha = 0.0;
  Eigen::MatrixXd sigma;  // covariance actually used for sampling (jitter applied)
  double jitter = 0.0;    // diagonal shift added to reach positive definiteness
};

// Sigma = (1 - epsilon) * A + epsilon * B. B is a pd x pd matrix with entries
// uniform on [-1, 1], multiplied by its own transpose, each row normalized by
// its sum of absolute values, then symmetrized; A is block-diagonal with p
// blocks of size d x d built by the same recipe. The rng stream is consumed
// in a fixed order (B first, then the A blocks), independent of epsilon.
Eigen::MatrixXd build_covariance(int p, int d, double epsilon, Rng& rng);

// X ~ N(0, Sigma) by Cholesky, Y = X beta + alpha + noise with beta and alpha
// uniform on [-1, 1] and noise ~ N(0, noise_sd^2).
std::pair<MultimodalDataset, SyntheticTruth> generate_synthetic_regression(
    const SyntheticConfig& config);

}  // namespace cshap
