#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "cshap/error.hpp"
#include "cshap/feature_map.hpp"
#include "cshap/kernels.hpp"
#include "cshap/quantile.hpp"
#include "cshap/rng.hpp"
#include "oracles.hpp"

using namespace cshap;

namespace {

struct Problem {
  Eigen::MatrixXd features;
  Eigen::VectorXd scores;
  FeatureMap fmap;
};

// Features ~ N(0, I_dim); scores carry a feature-driven location/scale signal
// plus noise, matching the shape of calibration Shapley scores.
Problem make_problem(int m, int dim, std::uint64_t seed) {
  Rng rng(seed);
  Problem prob;
  prob.features.resize(m, dim);
  prob.scores.resize(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < dim; ++j) prob.features(i, j) = rng.normal();
    double signal = prob.features(i, 0) - 0.5 * prob.features(i, dim > 1 ? 1 : 0);
    prob.scores[i] = signal + 0.3 * rng.normal();
  }
  prob.fmap = FeatureMap::identity(dim);
  return prob;
}

}  // namespace

TEST_CASE("pinball loss matches the analytic cases") {
  CHECK(pinball_loss(0.5, 0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(pinball_loss(0.9, 2.0, 1.0) == doctest::Approx(0.1).epsilon(1e-12));
  for (double tau : {0.05, 0.3, 0.97}) CHECK(pinball_loss(tau, 1.25, 1.25) == 0.0);
  CHECK_THROWS_AS(pinball_loss(0.0, 0.0, 1.0), Error);
}

TEST_CASE("sample quantile picks the lower order statistic") {
  Eigen::VectorXd v(4);
  v << 4.0, 1.0, 3.0, 2.0;
  CHECK(sample_quantile(v, 0.5) == 2.0);
  CHECK(sample_quantile(v, 0.25) == 1.0);
  CHECK(sample_quantile(v, 0.99) == 4.0);
}

TEST_CASE("constant scores are fitted exactly by the intercept") {
  auto prob = make_problem(30, 2, 1);
  Eigen::VectorXd constant = Eigen::VectorXd::Constant(30, 3.0);
  for (double tau : {0.1, 0.5, 0.9}) {
    auto model = fit_quantile(constant, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                              tau, 0.1, 0.1);
    for (int i = 0; i < 30; ++i)
      CHECK(std::abs(evaluate_quantile(model, prob.features.row(i).transpose()) - 3.0) <= 1e-4);
    CHECK(model.objective_value <= model.zero_objective);
  }
}

TEST_CASE("huge penalties reduce the fit to the scalar pinball minimizer") {
  auto prob = make_problem(60, 2, 3);
  for (double tau : {0.25, 0.5, 0.9}) {
    auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                              prob.fmap, tau, 1e8, 1e8);
    double target = sample_quantile(prob.scores, tau);
    for (int i = 0; i < 10; ++i) {
      double v = evaluate_quantile(model, prob.features.row(i).transpose());
      CHECK(std::abs(v - target) <= 1e-3);
    }
  }
}

TEST_CASE("solver reaches the admm oracle objective on seeded problems") {
  for (std::uint64_t seed : {10, 11, 12, 13, 14}) {
    auto prob = make_problem(50, 3, seed);
    double tau = seed % 2 == 0 ? 0.5 : 0.85;
    auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                              prob.fmap, tau, 0.01, 0.01);

    Eigen::MatrixXd gram = gram_matrix(model.kernel, model.anchors);
    Eigen::MatrixXd omega = model.fmap.apply_rows(model.anchors);
    auto oracle = testing::solve_pinball_admm(gram, omega, prob.scores, tau, 0.01, 0.01,
                                              1.0 / model.loss_normalizer);
    CHECK(oracle.kkt_residual <= 1e-6);
    CHECK(model.objective_value <= oracle.objective + 1e-5);
    CHECK(std::abs(model.objective_value - oracle.objective) <= 1e-5);
    CHECK(model.objective_value <= model.zero_objective);
  }
}

TEST_CASE("evaluation at anchors reproduces the fitted values") {
  auto prob = make_problem(40, 2, 21);
  auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                            0.5, 0.05, 0.05);
  for (int i = 0; i < 40; ++i) {
    double via_eval = evaluate_quantile(model, model.anchors.row(i).transpose());
    CHECK(std::abs(via_eval - model.fitted_values[i]) <= 1e-10);
  }
}

TEST_CASE("evaluation matches a from-scratch kernel sum") {
  auto prob = make_problem(30, 2, 22);
  auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian(1.7), prob.fmap,
                            0.7, 0.02, 0.02);
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x(2);
    x << rng.normal(), rng.normal();
    double expected = model.intercept;
    for (int i = 0; i < 30; ++i) {
      double d2 = (model.anchors.row(i).transpose() - x).squaredNorm();
      expected += model.dual_coeffs[i] * std::exp(-d2 / (2.0 * 1.7 * 1.7));
    }
    expected += model.beta.dot(x);  // identity feature map
    CHECK(std::abs(evaluate_quantile(model, x) - expected) <= 1e-10);
  }
}

TEST_CASE("width of the fit about the intercept obeys the rkhs bound") {
  auto prob = make_problem(60, 3, 31);
  auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                            0.9, 0.05, 0.05);
  const double j0 = model.zero_objective;
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x[j] = 2.0 * rng.normal();
    double bound = std::sqrt(j0 / model.lambda1) +
                   model.fmap.apply(x).norm() * std::sqrt(j0 / model.lambda2);
    CHECK(std::abs(evaluate_quantile(model, x) - model.intercept) <= bound + 1e-12);
  }
}

TEST_CASE("calibration fraction tracks the quantile level") {
  auto prob = make_problem(200, 2, 41);
  for (double tau : {0.05, 0.5, 0.95}) {
    auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                              prob.fmap, tau, 0.01, 0.01);
    int below = 0;
    for (int i = 0; i < 200; ++i)
      if (prob.scores[i] < model.fitted_values[i]) ++below;
    double frac = below / 200.0;
    double tol = std::max(0.05, 3.0 * std::sqrt(tau * (1 - tau) / 200.0));
    CHECK(std::abs(frac - tau) <= tol);
  }
}

TEST_CASE("independently fitted levels rarely cross") {
  auto prob = make_problem(150, 2, 43);
  auto lo = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                         0.1, 0.01, 0.01);
  auto hi = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                         0.9, 0.01, 0.01);
  int crossings = 0;
  for (int i = 0; i < 150; ++i) {
    Eigen::VectorXd x = prob.features.row(i).transpose();
    if (evaluate_quantile(lo, x) > evaluate_quantile(hi, x)) ++crossings;
  }
  CHECK(crossings <= 0.05 * 150);
}

TEST_CASE("impute mode reaches a fixed point at the test anchor") {
  auto prob = make_problem(60, 2, 51);
  Eigen::VectorXd x(2);
  x << 0.4, -1.1;
  auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                            0.8, 0.05, 0.05, &x, TestPointMode::impute);
  REQUIRE(model.imputed);
  CHECK(model.loss_normalizer == 61);
  CHECK(model.anchors.rows() == 61);
  CHECK(std::abs(evaluate_quantile(model, x) - model.imputed_score) <= 1e-5);

  auto omitted = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                              prob.fmap, 0.8, 0.05, 0.05, &x, TestPointMode::omit);
  CHECK(omitted.loss_normalizer == 60);
  // One extra loss point out of 61 moves the fit only slightly.
  CHECK(std::abs(evaluate_quantile(model, x) - evaluate_quantile(omitted, x)) <= 0.5);
}

TEST_CASE("cross validation honors the documented selection rules") {
  auto prob = make_problem(60, 2, 61);

  SUBCASE("singleton grid returns that pair") {
    auto choice = cross_validate_lambdas(prob.scores, prob.features,
                                         KernelSpec::gaussian_median(), prob.fmap, 0.5,
                                         {{0.25, 0.5}}, 5, 7);
    CHECK(choice.first == 0.25);
    CHECK(choice.second == 0.5);
  }

  SUBCASE("feature-driven scores prefer light regularization") {
    auto choice = cross_validate_lambdas(prob.scores, prob.features,
                                         KernelSpec::gaussian_median(), prob.fmap, 0.5,
                                         {{0.01, 0.01}, {1e8, 1e8}}, 5, 7);
    CHECK(choice.first == 0.01);
    CHECK(choice.second == 0.01);
  }

  SUBCASE("selection is deterministic in the seed") {
    std::vector<std::pair<double, double>> grid = {{0.01, 0.1}, {0.1, 0.01}, {1.0, 1.0}};
    auto a = cross_validate_lambdas(prob.scores, prob.features, KernelSpec::gaussian_median(),
                                    prob.fmap, 0.5, grid, 5, 99);
    auto b = cross_validate_lambdas(prob.scores, prob.features, KernelSpec::gaussian_median(),
                                    prob.fmap, 0.5, grid, 5, 99);
    CHECK(a == b);
  }
}

TEST_CASE("fit preconditions are enforced") {
  auto prob = make_problem(20, 2, 71);
  CHECK_THROWS_AS(fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                               prob.fmap, 1.5, 0.1, 0.1),
                  Error);
  CHECK_THROWS_AS(fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(),
                               prob.fmap, 0.5, 0.0, 0.1),
                  Error);
  Eigen::VectorXd bad = prob.scores;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit_quantile(bad, prob.features, KernelSpec::gaussian_median(), prob.fmap, 0.5,
                               0.1, 0.1),
                  Error);
  auto model = fit_quantile(prob.scores, prob.features, KernelSpec::gaussian_median(), prob.fmap,
                            0.5, 0.1, 0.1);
  CHECK_THROWS_AS(evaluate_quantile(model, Eigen::VectorXd::Zero(5)), Error);
}

TEST_CASE("median-heuristic bandwidth is the median pairwise distance") {
  Eigen::MatrixXd rows(3, 1);
  rows << 0.0, 1.0, 4.0;
  // Pairwise distances {1, 3, 4}; the median is 3.
  CHECK(median_pairwise_distance(rows) == 3.0);
  auto resolved = resolve_bandwidth(KernelSpec::gaussian_median(), rows);
  CHECK(resolved.bandwidth == 3.0);
}
