#include "cshap/synthetic.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <string>
#include <vector>

#include "cshap/error.hpp"

namespace cshap {

namespace {

// Uniform [-1,1] draw, multiply by the transpose, normalize each row by its
// sum of absolute values, then symmetrize.
Eigen::MatrixXd normalized_gram_block(int k, Rng& rng) {
  Eigen::MatrixXd raw(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) raw(i, j) = rng.uniform_sym();
  Eigen::MatrixXd m = raw * raw.transpose();
  for (int i = 0; i < k; ++i) {
    double s = m.row(i).cwiseAbs().sum();
    if (s > 0) m.row(i) /= s;
  }
  return 0.5 * (m + m.transpose());
}

}  // namespace

Eigen::MatrixXd build_covariance(int p, int d, double epsilon, Rng& rng) {
  if (p < 1 || d < 1) fail(ErrorKind::config, "build_covariance: p and d must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    fail(ErrorKind::config, "build_covariance: epsilon must lie in [0, 1]");

  const int width = p * d;
  Eigen::MatrixXd b = normalized_gram_block(width, rng);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(width, width);
  for (int j = 0; j < p; ++j)
    a.block(j * d, j * d, d, d) = normalized_gram_block(d, rng);
  return (1.0 - epsilon) * a + epsilon * b;
}

std::pair<MultimodalDataset, SyntheticTruth> generate_synthetic_regression(
    const SyntheticConfig& config) {
  if (config.n < 4) fail(ErrorKind::config, "synthetic: n must be >= 4");
  if (!(config.noise_sd > 0.0)) fail(ErrorKind::config, "synthetic: noise_sd must be > 0");

  const int width = config.p * config.d;
  Rng rng(config.seed, /*stream=*/0x5E17);

  Eigen::MatrixXd sigma = build_covariance(config.p, config.d, config.epsilon, rng);

  SyntheticTruth truth;
  truth.beta.resize(width);
  for (int c = 0; c < width; ++c) truth.beta[c] = rng.uniform_sym();
  truth.alpha = rng.uniform_sym();

  // The row-normalized construction does not guarantee positive definiteness;
  // shift the diagonal just enough for a valid Gaussian.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sigma);
  if (eig.info() != Eigen::Success)
    fail(ErrorKind::numeric, "synthetic: eigendecomposition of Sigma failed");
  double min_eig = eig.eigenvalues().minCoeff();
  truth.jitter = std::max(0.0, -min_eig) + 1e-8;
  sigma += truth.jitter * Eigen::MatrixXd::Identity(width, width);
  truth.sigma = sigma;

  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    fail(ErrorKind::numeric, "synthetic: Sigma not positive definite after jitter");
  Eigen::MatrixXd chol = llt.matrixL();

  MultimodalDataset ds;
  ds.layout = ModalityLayout::make(std::vector<int>(config.p, config.d));
  ds.task = Task::regression();
  ds.X.resize(config.n, width);
  Eigen::VectorXd z(width);
  for (int i = 0; i < config.n; ++i) {
    for (int c = 0; c < width; ++c) z[c] = rng.normal();
    ds.X.row(i) = (chol * z).transpose();
  }
  ds.y.resize(config.n);
  for (int i = 0; i < config.n; ++i)
    ds.y[i] = ds.X.row(i).dot(truth.beta) + truth.alpha + config.noise_sd * rng.normal();

  return {std::move(ds), std::move(truth)};
}

}  // namespace cshap
