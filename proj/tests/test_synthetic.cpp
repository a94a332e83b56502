#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cshap/error.hpp"
#include "cshap/rng.hpp"
#include "cshap/synthetic.hpp"

using namespace cshap;

namespace {

// Step-by-step re-derivation of the covariance recipe, independent of the
// production code: uniform draw, times transpose, row-normalize, symmetrize.
Eigen::MatrixXd recipe_block(int k, Rng& rng) {
  Eigen::MatrixXd raw(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) raw(i, j) = rng.uniform_sym();
  Eigen::MatrixXd m = raw * raw.transpose();
  for (int i = 0; i < k; ++i) {
    double s = 0;
    for (int j = 0; j < k; ++j) s += std::abs(m(i, j));
    if (s > 0)
      for (int j = 0; j < k; ++j) m(i, j) /= s;
  }
  return 0.5 * (m + m.transpose());
}

struct RecipeParts {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
};

RecipeParts recipe_parts(int p, int d, std::uint64_t seed) {
  Rng rng(seed);
  RecipeParts parts;
  parts.b = recipe_block(p * d, rng);
  parts.a = Eigen::MatrixXd::Zero(p * d, p * d);
  for (int j = 0; j < p; ++j) parts.a.block(j * d, j * d, d, d) = recipe_block(d, rng);
  return parts;
}

}  // namespace

TEST_CASE("epsilon = 0 yields an exactly block-diagonal covariance") {
  Rng rng(3);
  auto sigma = build_covariance(3, 2, 0.0, rng);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i / 2 != j / 2) CHECK(sigma(i, j) == 0.0);
}

TEST_CASE("epsilon = 1 reproduces the dense component") {
  Rng rng(11);
  auto sigma = build_covariance(2, 2, 1.0, rng);
  auto parts = recipe_parts(2, 2, 11);
  CHECK((sigma - parts.b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("covariance matches the hand recipe at epsilon = 0.5") {
  Rng rng(19);
  auto sigma = build_covariance(2, 2, 0.5, rng);
  auto parts = recipe_parts(2, 2, 19);
  Eigen::MatrixXd expected = 0.5 * parts.a + 0.5 * parts.b;
  CHECK((sigma - expected).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("covariance interpolates exactly in epsilon for a fixed stream") {
  auto parts = recipe_parts(4, 3, 23);
  for (double eps : {0.0, 0.25, 0.6, 1.0}) {
    Rng rng(23);
    auto sigma = build_covariance(4, 3, eps, rng);
    Eigen::MatrixXd expected = (1.0 - eps) * parts.a + eps * parts.b;
    CHECK((sigma - expected).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("covariance is symmetric to machine precision") {
  Rng rng(29);
  auto sigma = build_covariance(5, 3, 0.7, rng);
  CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("covariance rejects bad arguments") {
  Rng rng(1);
  CHECK_THROWS_AS(build_covariance(0, 2, 0.5, rng), Error);
  CHECK_THROWS_AS(build_covariance(2, 2, 1.5, rng), Error);
}

TEST_CASE("noiseless limit recovers the linear model") {
  SyntheticConfig config;
  config.p = 3;
  config.d = 2;
  config.n = 50;
  config.epsilon = 0.4;
  config.noise_sd = 1e-12;
  config.seed = 5;
  auto [ds, truth] = generate_synthetic_regression(config);
  Eigen::VectorXd residual = ds.y - ds.X * truth.beta -
                             Eigen::VectorXd::Constant(ds.n(), truth.alpha);
  CHECK(residual.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("paper-default dimensions come out as 1000 x 30") {
  SyntheticConfig config;  // defaults p=10, d=3, n=1000
  config.seed = 42;
  auto [ds, truth] = generate_synthetic_regression(config);
  CHECK(ds.n() == 1000);
  CHECK(ds.layout.width() == 30);
  CHECK(ds.layout.p == 10);
  CHECK(truth.beta.size() == 30);
  CHECK(truth.beta.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(std::abs(truth.alpha) <= 1.0);
}

TEST_CASE("generator is deterministic given the config") {
  SyntheticConfig config;
  config.p = 2;
  config.d = 2;
  config.n = 30;
  config.epsilon = 0.5;
  config.seed = 9;
  auto [a, ta] = generate_synthetic_regression(config);
  auto [b, tb] = generate_synthetic_regression(config);
  CHECK((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.y - b.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ta.sigma - tb.sigma).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ta.alpha == tb.alpha);
}

TEST_CASE("sample covariance approaches the target covariance") {
  SyntheticConfig config;
  config.p = 2;
  config.d = 2;
  config.n = 50000;
  config.epsilon = 0.5;
  config.seed = 13;
  auto [ds, truth] = generate_synthetic_regression(config);
  Eigen::MatrixXd centered = ds.X.rowwise() - ds.X.colwise().mean();
  Eigen::MatrixXd sample = centered.transpose() * centered / (ds.n() - 1.0);
  CHECK((sample - truth.sigma).cwiseAbs().maxCoeff() <= 0.05);
}
