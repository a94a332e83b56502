#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cshap/error.hpp"
#include "cshap/feature_map.hpp"
#include "cshap/rng.hpp"

using namespace cshap;

namespace {

Eigen::MatrixXd gaussian_rows(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("full-rank pca is an orthonormal rotation") {
  auto layout = ModalityLayout::make({3});
  auto rows = gaussian_rows(40, 3, 7);
  auto fmap = fit_feature_map(rows, layout, {3});

  const auto& block = fmap.blocks[0];
  CHECK((block.loadings.transpose() * block.loadings - Eigen::MatrixXd::Identity(3, 3))
            .cwiseAbs()
            .maxCoeff() <= 1e-8);

  // Projection then reconstruction is lossless at full rank.
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd x = rows.row(i).transpose();
    Eigen::VectorXd projected = fmap.apply(x);
    Eigen::VectorXd rebuilt = block.loadings * projected + block.mean;
    CHECK((rebuilt - x).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("a one-dimensional subspace captures all variance with d_omega 1") {
  auto layout = ModalityLayout::make({3});
  Rng rng(13);
  Eigen::VectorXd direction(3);
  direction << 1.0, -2.0, 0.5;
  Eigen::MatrixXd rows(50, 3);
  for (int i = 0; i < 50; ++i) rows.row(i) = (rng.normal() * direction).transpose();

  auto fmap = fit_feature_map(rows, layout, {1});
  const auto& evs = fmap.blocks[0].eigenvalues;
  double ratio = evs[0] / evs.sum();
  CHECK(ratio == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("projected coordinates are uncorrelated") {
  auto layout = ModalityLayout::make({4});
  Rng rng(29);
  // Correlated 4-d Gaussian via a random mixing matrix.
  Eigen::MatrixXd mix(4, 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) mix(i, j) = rng.uniform_sym();
  Eigen::MatrixXd rows(300, 4);
  for (int i = 0; i < 300; ++i) {
    Eigen::VectorXd z(4);
    for (int j = 0; j < 4; ++j) z[j] = rng.normal();
    rows.row(i) = (mix * z).transpose();
  }

  auto fmap = fit_feature_map(rows, layout, {4});
  Eigen::MatrixXd projected = fmap.apply_rows(rows);
  Eigen::MatrixXd centered = projected.rowwise() - projected.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / (rows.rows() - 1.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (i != j) CHECK(std::abs(cov(i, j)) <= 1e-8);
}

TEST_CASE("rank deficiency below d_omega is rejected") {
  auto layout = ModalityLayout::make({3});
  Rng rng(31);
  Eigen::MatrixXd rows(30, 3);
  for (int i = 0; i < 30; ++i) {
    double t = rng.normal();
    rows(i, 0) = t;
    rows(i, 1) = 2.0 * t;  // rank-1 block
    rows(i, 2) = -t;
  }
  CHECK_THROWS_WITH_AS(fit_feature_map(rows, layout, {2}), doctest::Contains("smaller d_omega"),
                       Error);
  CHECK_NOTHROW(fit_feature_map(rows, layout, {1}));
}

TEST_CASE("preconditions on d_omega and row counts") {
  auto layout = ModalityLayout::make({2, 3});
  auto rows = gaussian_rows(20, 5, 3);
  CHECK_THROWS_AS(fit_feature_map(rows, layout, {2}), Error);        // wrong length
  CHECK_THROWS_AS(fit_feature_map(rows, layout, {2, 4}), Error);     // d_omega > dim
  CHECK_THROWS_AS(fit_feature_map(gaussian_rows(3, 5, 3), layout, {2, 3}), Error);  // few rows
}

TEST_CASE("per-modality blocks concatenate in modality order") {
  auto layout = ModalityLayout::make({2, 2});
  auto rows = gaussian_rows(60, 4, 17);
  auto fmap = fit_feature_map(rows, layout, {1, 2});
  CHECK(fmap.out_dim() == 3);
  CHECK(fmap.in_dim() == 4);
  Eigen::VectorXd x = rows.row(0).transpose();
  Eigen::VectorXd out = fmap.apply(x);
  Eigen::VectorXd first =
      fmap.blocks[0].loadings.transpose() * (x.head(2) - fmap.blocks[0].mean);
  CHECK(out[0] == doctest::Approx(first[0]).epsilon(1e-14));
}

TEST_CASE("identity map passes features through untouched") {
  auto fmap = FeatureMap::identity(3);
  Eigen::VectorXd x(3);
  x << 1.5, -2.0, 0.25;
  CHECK((fmap.apply(x) - x).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fmap.out_dim() == 3);
}
