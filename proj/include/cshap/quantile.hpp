#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cshap/feature_map.hpp"
#include "cshap/kernels.hpp"

namespace cshap {

// (tau - 1{v <= u}) (v - u); u is the predicted quantile, v the observed
// score.
double pinball_loss(double tau, double u, double v);

// Whether the fit accounts for the test point x_{n+1}. `impute` puts the test
// point into the loss with its unknown score imputed at the fitted quantile,
// iterated to a fixed point (the loss is then averaged over m+1 terms);
// `omit` drops it (m terms) — a cheaper documented approximation.
enum class TestPointMode { omit, impute };

struct SolveOptions {
  double mu0 = 0.0;     // initial pinball smoothing; <= 0 derives it from the score scale
  double mu_min = 0.0;  // final smoothing; <= 0 derives it from the score scale
  // Converged when the relative objective change over `window` iterations
  // drops below rel_tol. 1e-11 keeps the solution objective within ~3e-6 of
  // an exact QP solve on calibration-sized problems.
  double rel_tol = 1e-11;
  int window = 10;
  long max_iters = 2000000;  // across all continuation stages
  int max_impute_iters = 20;
  double impute_tol = 1e-6;
  bool collect_trace = false;
};

// Fitted conditional quantile h(x) = intercept + sum_i a_i K(anchor_i, x)
// + Omega(x)' beta.
struct QuantileModel {
  double tau = 0.5;
  KernelSpec kernel;           // bandwidth resolved
  FeatureMap fmap;
  Eigen::MatrixXd anchors;     // fit points (calibration features, + test point when imputing)
  Eigen::VectorXd dual_coeffs; // a
  Eigen::VectorXd beta;
  double intercept = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;

  double objective_value = 0.0;  // exact pinball objective at the solution
  double zero_objective = 0.0;   // J(0), the zero function's objective
  int loss_normalizer = 0;       // m (omit) or m + 1 (impute)
  Eigen::VectorXd fitted_values; // h evaluated at the anchors during fitting

  bool imputed = false;
  double imputed_score = 0.0;
  int impute_iterations = 0;

  std::vector<std::pair<long, double>> trace;  // (iteration, smoothed objective)
};

// Minimizes  (1/norm) * sum_i pinball(tau, h(x_i), score_i)
//            + lambda1 ||h_K||_K^2 + lambda2 ||beta||^2
// over h = h_K + Omega' beta + intercept (intercept unpenalized), with h_K in
// representer form over the anchors. Solved by accelerated first-order
// descent on a smoothed pinball with continuation of the smoothing parameter.
QuantileModel fit_quantile(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                           const KernelSpec& kernel, const FeatureMap& fmap, double tau,
                           double lambda1, double lambda2,
                           const Eigen::VectorXd* test_point = nullptr,
                           TestPointMode mode = TestPointMode::omit,
                           const SolveOptions& opts = {});

double evaluate_quantile(const QuantileModel& model, const Eigen::VectorXd& x);

// Five-fold (by default) grid search minimizing mean held-out pinball loss;
// exact ties go to the larger (lambda1, lambda2) pair. Failed cells are
// skipped; it is an error for every cell to fail.
std::pair<double, double> cross_validate_lambdas(
    const Eigen::VectorXd& scores, const Eigen::MatrixXd& features, const KernelSpec& kernel,
    const FeatureMap& fmap, double tau, const std::vector<std::pair<double, double>>& grid,
    int folds, std::uint64_t seed);

// Serialized form: kernel spec, anchors fingerprint, coefficients.
nlohmann::json quantile_model_to_json(const QuantileModel& model);

// Lower order statistic at level tau (index ceil(tau * k) in 1-based terms).
double sample_quantile(const Eigen::VectorXd& values, double tau);

}  // namespace cshap
