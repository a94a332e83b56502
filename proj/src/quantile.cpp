#include "cshap/quantile.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cshap/error.hpp"
#include "cshap/rng.hpp"

namespace cshap {

using nlohmann::json;

double pinball_loss(double tau, double u, double v) {
  if (!(tau > 0.0 && tau < 1.0)) fail(ErrorKind::config, "pinball_loss: tau must lie in (0, 1)");
  return (tau - (v <= u ? 1.0 : 0.0)) * (v - u);
}

double sample_quantile(const Eigen::VectorXd& values, double tau) {
  std::vector<double> v(values.data(), values.data() + values.size());
  std::sort(v.begin(), v.end());
  int k = static_cast<int>(v.size());
  int idx = std::clamp(static_cast<int>(std::ceil(tau * k)) - 1, 0, k - 1);
  return v[idx];
}

namespace {

// Moreau envelope of the pinball loss in the residual r = v - u: quadratic of
// curvature 1/mu inside the kink, the exact loss (shifted by a constant)
// outside. Gradient in r is clamp(r / mu, tau - 1, tau).
double smoothed_pinball(double tau, double r, double mu) {
  if (r >= tau * mu) return tau * r - 0.5 * tau * tau * mu;
  if (r <= -(1.0 - tau) * mu) return (tau - 1.0) * r - 0.5 * (1.0 - tau) * (1.0 - tau) * mu;
  return 0.5 * r * r / mu;
}

struct PinballProblem {
  Eigen::MatrixXd gram;      // k x k, jittered PSD
  Eigen::MatrixXd omega;     // k x d
  Eigen::VectorXd scores;    // k
  double tau = 0.5;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double inv_norm = 0.0;     // 1 / loss_normalizer

  int k() const { return static_cast<int>(gram.rows()); }
  int d() const { return static_cast<int>(omega.cols()); }
  int dof() const { return k() + d() + 1; }

  Eigen::VectorXd predictions(const Eigen::VectorXd& x) const {
    return gram * x.head(k()) + omega * x.segment(k(), d()) +
           Eigen::VectorXd::Constant(k(), x[dof() - 1]);
  }

  double exact_objective(const Eigen::VectorXd& x) const {
    Eigen::VectorXd u = predictions(x);
    double loss = 0.0;
    for (int i = 0; i < k(); ++i) loss += pinball_loss(tau, u[i], scores[i]);
    return inv_norm * loss + lambda1 * x.head(k()).dot(gram * x.head(k())) +
           lambda2 * x.segment(k(), d()).squaredNorm();
  }

  double smoothed_objective(const Eigen::VectorXd& x, double mu) const {
    Eigen::VectorXd u = predictions(x);
    double loss = 0.0;
    for (int i = 0; i < k(); ++i) loss += smoothed_pinball(tau, scores[i] - u[i], mu);
    return inv_norm * loss + lambda1 * x.head(k()).dot(gram * x.head(k())) +
           lambda2 * x.segment(k(), d()).squaredNorm();
  }

  // Exact minimizer over the intercept with the kernel/linear contributions
  // held fixed at their values inside u (fitted at intercept current_b). The
  // derivative in b is monotone piecewise linear, so bisection is safe; the
  // unpenalized intercept is the one direction plain momentum descent crawls
  // along, and solving it exactly removes that tail.
  double optimal_intercept(const Eigen::VectorXd& u, double current_b, double mu) const {
    auto slope = [&](double b) {
      double s = 0.0;
      for (int i = 0; i < k(); ++i)
        s -= std::clamp((scores[i] - u[i] + current_b - b) / mu, tau - 1.0, tau);
      return s;
    };
    if (slope(current_b) == 0.0) return current_b;
    double lo = scores[0] - u[0] + current_b, hi = lo;
    for (int i = 1; i < k(); ++i) {
      double c = scores[i] - u[i] + current_b;
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    lo -= mu;
    hi += mu;
    if (slope(lo) >= 0.0) return lo;
    if (slope(hi) <= 0.0) return hi;
    for (int it = 0; it < 200 && hi - lo > 0; ++it) {
      double mid = 0.5 * (lo + hi);
      (slope(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& x, double mu) const {
    double value;
    return gradient_and_value(x, mu, value);
  }

  Eigen::VectorXd gradient_and_value(const Eigen::VectorXd& x, double mu, double& value) const {
    Eigen::VectorXd u = predictions(x);
    Eigen::VectorXd g(k());
    double loss = 0.0;
    for (int i = 0; i < k(); ++i) {
      double r = scores[i] - u[i];
      loss += smoothed_pinball(tau, r, mu);
      g[i] = -inv_norm * std::clamp(r / mu, tau - 1.0, tau);
    }
    Eigen::VectorXd ga = gram * x.head(k());
    value = inv_norm * loss + lambda1 * x.head(k()).dot(ga) +
            lambda2 * x.segment(k(), d()).squaredNorm();
    Eigen::VectorXd grad(dof());
    grad.head(k()) = gram * g + 2.0 * lambda1 * ga;
    grad.segment(k(), d()) = omega.transpose() * g + 2.0 * lambda2 * x.segment(k(), d());
    grad[dof() - 1] = g.sum();
    return grad;
  }
};

struct SolveStats {
  long iterations = 0;
  std::vector<std::pair<long, double>> trace;
};

// FISTA in a diagonally preconditioned metric with backtracking steps,
// monotone restarts and exact recentring of the unpenalized intercept; one
// call per smoothing level. The per-coordinate curvature bounds in `precond`
// absorb the anisotropy between heavily penalized coefficients and the
// intercept. Predictions and the kernel image G a are linear in the iterate,
// so momentum points and trial steps are tracked incrementally; the exact
// values are refreshed periodically against drift.
void fista_stage(const PinballProblem& prob, double mu, const Eigen::VectorXd& precond,
                 const SolveOptions& opts, Eigen::VectorXd& x, SolveStats& stats) {
  const Eigen::VectorXd inv_precond = precond.cwiseInverse();
  const int k = prob.k(), d = prob.d();
  const int b_slot = prob.dof() - 1;
  double factor = 1.0;  // step multiplier in the preconditioned metric
  const double factor_max = 1e6;

  auto loss_of = [&](const Eigen::VectorXd& u) {
    double loss = 0.0;
    for (int i = 0; i < k; ++i) loss += smoothed_pinball(prob.tau, prob.scores[i] - u[i], mu);
    return prob.inv_norm * loss;
  };
  auto penalty_of = [&](const Eigen::VectorXd& pt, const Eigen::VectorXd& ga) {
    return prob.lambda1 * pt.head(k).dot(ga) + prob.lambda2 * pt.segment(k, d).squaredNorm();
  };
  // Exact minimization over the intercept; shifts u along with b.
  auto recentre = [&](Eigen::VectorXd& pt, Eigen::VectorXd& u, const Eigen::VectorXd& ga,
                      double& objective) {
    double best_b = prob.optimal_intercept(u, pt[b_slot], mu);
    if (best_b != pt[b_slot]) {
      u.array() += best_b - pt[b_slot];
      pt[b_slot] = best_b;
      objective = loss_of(u) + penalty_of(pt, ga);
    }
  };

  Eigen::VectorXd u_x = prob.predictions(x);
  Eigen::VectorXd ga_x = prob.gram * x.head(k);
  double j_x = loss_of(u_x) + penalty_of(x, ga_x);
  recentre(x, u_x, ga_x, j_x);

  Eigen::VectorXd x_prev = x, u_prev = u_x, ga_prev = ga_x;
  Eigen::VectorXd y = x, u_y = u_x, ga_y = ga_x;
  double t = 1.0;
  int rejections = 0;
  long accepted = 0;
  std::deque<double> history{j_x};

  Eigen::VectorXd g(k), grad(prob.dof());
  while (stats.iterations < opts.max_iters) {
    ++stats.iterations;

    double loss_y = 0.0;
    for (int i = 0; i < k; ++i) {
      double r = prob.scores[i] - u_y[i];
      loss_y += smoothed_pinball(prob.tau, r, mu);
      g[i] = -prob.inv_norm * std::clamp(r / mu, prob.tau - 1.0, prob.tau);
    }
    double j_y = prob.inv_norm * loss_y + penalty_of(y, ga_y);
    grad.head(k) = prob.gram * g + 2.0 * prob.lambda1 * ga_y;
    grad.segment(k, d) = prob.omega.transpose() * g + 2.0 * prob.lambda2 * y.segment(k, d);
    grad[b_slot] = g.sum();

    const Eigen::VectorXd dir = grad.cwiseProduct(inv_precond);
    const Eigen::VectorXd g_dir = prob.gram * dir.head(k);
    const Eigen::VectorXd u_dir = g_dir + prob.omega * dir.segment(k, d) +
                                  Eigen::VectorXd::Constant(k, dir[b_slot]);
    const double grad_dot_dir = grad.dot(dir);
    const double dir_metric = dir.dot(precond.cwiseProduct(dir));

    factor = std::max(factor * 0.9, 1e-8);
    Eigen::VectorXd x_new, u_new, ga_new;
    double j_new;
    while (true) {
      const double s = 1.0 / factor;
      x_new = y - s * dir;
      u_new = u_y - s * u_dir;
      ga_new = ga_y - s * g_dir;
      j_new = loss_of(u_new) + penalty_of(x_new, ga_new);
      double quad = j_y - s * grad_dot_dir + 0.5 * factor * s * s * dir_metric;
      if (j_new <= quad + 1e-15 * std::max(1.0, std::abs(j_y)) || factor >= factor_max) break;
      factor = std::min(2.0 * factor, factor_max);
    }
    recentre(x_new, u_new, ga_new, j_new);

    if (j_new > j_x + 1e-14 * std::max(1.0, std::abs(j_x))) {
      // Momentum overshot: reject the step, damp and restart. The tolerance
      // keeps last-ulp noise from rejecting forever once the objective sits
      // at floating-point resolution.
      factor = std::min(2.0 * factor, factor_max);
      t = 1.0;
      y = x;
      u_y = u_x;
      ga_y = ga_x;
      if (++rejections >= 60) return;  // no representable progress left
      continue;
    }
    rejections = 0;
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double c = (t - 1.0) / t_next;
    y = x_new + c * (x_new - x_prev);
    u_y = u_new + c * (u_new - u_prev);
    ga_y = ga_new + c * (ga_new - ga_prev);
    t = t_next;
    x_prev = std::move(x);
    u_prev = std::move(u_x);
    ga_prev = std::move(ga_x);
    x = std::move(x_new);
    u_x = std::move(u_new);
    ga_x = std::move(ga_new);
    j_x = j_new;

    if (++accepted % 256 == 0) {  // clear accumulated drift
      u_y = prob.predictions(y);
      ga_y = prob.gram * y.head(k);
    }

    if (opts.collect_trace) stats.trace.emplace_back(stats.iterations, j_new);

    history.push_back(j_new);
    if (static_cast<int>(history.size()) > opts.window + 1) history.pop_front();
    if (static_cast<int>(history.size()) == opts.window + 1) {
      double change = std::abs(history.front() - history.back());
      if (change <= opts.rel_tol * std::max(std::abs(j_new), 1e-12)) return;
    }
  }

  std::ostringstream msg;
  msg << "quantile solver did not converge within " << opts.max_iters
      << " iterations (smoothing " << mu << ", objective " << prob.exact_objective(x)
      << ", gradient norm " << prob.gradient(x, mu).norm() << ")";
  fail(ErrorKind::convergence, msg.str());
}

// Solves the smoothed problem with continuation mu0 -> mu_min, warm-starting
// each stage at the previous solution.
SolveStats solve_pinball(const PinballProblem& prob, const SolveOptions& opts,
                         Eigen::VectorXd& x) {
  double scale = std::max(prob.scores.cwiseAbs().maxCoeff(), 1e-12);
  double mu0 = opts.mu0 > 0 ? opts.mu0 : 0.25 * scale;
  double mu_min = opts.mu_min > 0 ? opts.mu_min : std::max(1e-7 * scale, 1e-12);
  mu0 = std::max(mu0, mu_min);

  const int k = prob.k(), d = prob.d();
  // Per-coordinate curvature bounds: loss contributes (1/(norm*mu)) * column
  // norms of [G Omega 1], the penalties their diagonal Hessians.
  Eigen::VectorXd loss_diag(prob.dof());
  for (int i = 0; i < k; ++i) loss_diag[i] = prob.gram.col(i).squaredNorm();
  for (int j = 0; j < d; ++j) loss_diag[k + j] = prob.omega.col(j).squaredNorm();
  loss_diag[prob.dof() - 1] = static_cast<double>(k);
  Eigen::VectorXd penalty_diag = Eigen::VectorXd::Zero(prob.dof());
  penalty_diag.head(k) = 2.0 * prob.lambda1 * prob.gram.diagonal();
  penalty_diag.segment(k, d).setConstant(2.0 * prob.lambda2);

  SolveStats stats;
  double mu = mu0;
  while (true) {
    Eigen::VectorXd precond =
        (prob.inv_norm / mu) * loss_diag + penalty_diag +
        Eigen::VectorXd::Constant(prob.dof(), 1e-12);
    // Intermediate stages only warm-start the next smoothing level and may
    // stall earlier than the final stage.
    SolveOptions stage_opts = opts;
    if (mu > mu_min) stage_opts.rel_tol = std::max(opts.rel_tol, 1e-9);
    fista_stage(prob, mu, precond, stage_opts, x, stats);
    if (mu <= mu_min) break;
    mu = std::max(0.2 * mu, mu_min);
  }
  return stats;
}

Eigen::MatrixXd jittered_gram(const KernelSpec& kernel, const Eigen::MatrixXd& anchors) {
  Eigen::MatrixXd gram = gram_matrix(kernel, anchors);
  const int k = static_cast<int>(gram.rows());
  const double unit = gram.trace() / std::max(k, 1);
  for (double jit : {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8}) {
    Eigen::MatrixXd candidate = gram;
    candidate.diagonal().array() += jit * unit;
    Eigen::LLT<Eigen::MatrixXd> llt(candidate);
    if (llt.info() == Eigen::Success) return candidate;
  }
  fail(ErrorKind::numeric, "kernel matrix is not positive semidefinite after jitter");
}

}  // namespace

QuantileModel fit_quantile(const Eigen::VectorXd& scores, const Eigen::MatrixXd& features,
                           const KernelSpec& kernel, const FeatureMap& fmap, double tau,
                           double lambda1, double lambda2, const Eigen::VectorXd* test_point,
                           TestPointMode mode, const SolveOptions& opts) {
  if (!(tau > 0.0 && tau < 1.0)) fail(ErrorKind::config, "fit_quantile: tau must lie in (0, 1)");
  if (!(lambda1 > 0.0 && lambda2 > 0.0))
    fail(ErrorKind::config, "fit_quantile: lambda1 and lambda2 must be > 0");
  if (scores.size() != features.rows())
    fail(ErrorKind::config, "fit_quantile: scores/features row mismatch");
  if (!scores.allFinite()) fail(ErrorKind::config, "fit_quantile: scores must be finite");

  const int m = static_cast<int>(scores.size());
  const bool impute = test_point != nullptr && mode == TestPointMode::impute;

  QuantileModel model;
  model.tau = tau;
  model.lambda1 = lambda1;
  model.lambda2 = lambda2;
  model.kernel = resolve_bandwidth(kernel, features);
  model.fmap = fmap;
  model.loss_normalizer = impute ? m + 1 : m;

  const int k = impute ? m + 1 : m;
  model.anchors.resize(k, features.cols());
  model.anchors.topRows(m) = features;
  if (impute) model.anchors.row(m) = test_point->transpose();

  PinballProblem prob;
  prob.gram = jittered_gram(model.kernel, model.anchors);
  prob.omega = model.fmap.apply_rows(model.anchors);
  prob.tau = tau;
  prob.lambda1 = lambda1;
  prob.lambda2 = lambda2;
  prob.inv_norm = 1.0 / model.loss_normalizer;
  prob.scores.resize(k);
  prob.scores.head(m) = scores;

  Eigen::VectorXd x = Eigen::VectorXd::Zero(prob.dof());
  x[prob.dof() - 1] = sample_quantile(scores, tau);

  SolveStats stats;
  if (impute) {
    // Fixed point on the test point's imputed score: refit, read off the
    // fitted quantile at x_{n+1}, repeat.
    double imputed = sample_quantile(scores, tau);
    int iter = 0;
    while (true) {
      ++iter;
      prob.scores[m] = imputed;
      SolveStats s = solve_pinball(prob, opts, x);
      stats.iterations += s.iterations;
      if (opts.collect_trace)
        stats.trace.insert(stats.trace.end(), s.trace.begin(), s.trace.end());
      double fitted = prob.predictions(x)[m];
      bool converged = std::abs(fitted - imputed) <= opts.impute_tol;
      imputed = fitted;
      if (converged || iter >= opts.max_impute_iters) break;
    }
    model.imputed = true;
    model.imputed_score = imputed;
    model.impute_iterations = iter;
    prob.scores[m] = imputed;
  } else {
    stats = solve_pinball(prob, opts, x);
  }

  model.dual_coeffs = x.head(prob.k());
  model.beta = x.segment(prob.k(), prob.d());
  model.intercept = x[prob.dof() - 1];
  model.fitted_values = prob.predictions(x);
  model.objective_value = prob.exact_objective(x);
  model.zero_objective =
      [&] {
        double loss = 0.0;
        for (int i = 0; i < prob.k(); ++i) loss += pinball_loss(tau, 0.0, prob.scores[i]);
        return prob.inv_norm * loss;
      }();
  model.trace = std::move(stats.trace);
  return model;
}

double evaluate_quantile(const QuantileModel& model, const Eigen::VectorXd& x) {
  if (x.size() != model.anchors.cols())
    fail(ErrorKind::config, "evaluate_quantile: feature width mismatch");
  double value = model.intercept + model.dual_coeffs.dot(kernel_column(model.kernel, model.anchors, x));
  if (model.beta.size() > 0) value += model.beta.dot(model.fmap.apply(x));
  return value;
}

std::pair<double, double> cross_validate_lambdas(
    const Eigen::VectorXd& scores, const Eigen::MatrixXd& features, const KernelSpec& kernel,
    const FeatureMap& fmap, double tau, const std::vector<std::pair<double, double>>& grid,
    int folds, std::uint64_t seed) {
  const int m = static_cast<int>(scores.size());
  if (grid.empty()) fail(ErrorKind::config, "cross_validate_lambdas: empty grid");
  if (folds < 2 || m < folds)
    fail(ErrorKind::config, "cross_validate_lambdas: need 2 <= folds <= m");

  // Seeded fold assignment shared by every grid cell.
  std::vector<int> perm(m);
  for (int i = 0; i < m; ++i) perm[i] = i;
  Rng rng(seed, /*stream=*/0xCF01D);
  for (int i = m - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  std::vector<int> fold_of(m);
  for (int i = 0; i < m; ++i) fold_of[perm[i]] = i % folds;

  const KernelSpec resolved = resolve_bandwidth(kernel, features);

  bool any_ok = false;
  double best_score = 0.0;
  std::pair<double, double> best{0.0, 0.0};
  std::string last_error;
  for (const auto& cell : grid) {
    double total = 0.0;
    bool failed = false;
    for (int f = 0; f < folds && !failed; ++f) {
      std::vector<int> train_rows, val_rows;
      for (int i = 0; i < m; ++i) (fold_of[i] == f ? val_rows : train_rows).push_back(i);
      Eigen::MatrixXd ftrain(train_rows.size(), features.cols());
      Eigen::VectorXd strain(train_rows.size());
      for (std::size_t i = 0; i < train_rows.size(); ++i) {
        ftrain.row(static_cast<Eigen::Index>(i)) = features.row(train_rows[i]);
        strain[static_cast<Eigen::Index>(i)] = scores[train_rows[i]];
      }
      try {
        QuantileModel fit = fit_quantile(strain, ftrain, resolved, fmap, tau, cell.first,
                                         cell.second);
        for (int i : val_rows)
          total += pinball_loss(tau, evaluate_quantile(fit, features.row(i).transpose()),
                                scores[i]);
      } catch (const Error& e) {
        failed = true;
        last_error = e.what();
      }
    }
    if (failed) continue;
    double mean = total / m;
    bool better = !any_ok || mean < best_score ||
                  (mean == best_score &&
                   (cell.first > best.first ||
                    (cell.first == best.first && cell.second > best.second)));
    if (better) {
      best_score = mean;
      best = cell;
    }
    any_ok = true;
  }
  if (!any_ok)
    fail(ErrorKind::numeric, "cross_validate_lambdas: every grid cell failed (last: " +
                                 last_error + ")");
  return best;
}

json quantile_model_to_json(const QuantileModel& model) {
  json j;
  j["tau"] = model.tau;
  j["kernel"] = {{"kind", model.kernel.kind == KernelSpec::Kind::gaussian ? "gaussian" : "linear"},
                 {"bandwidth", model.kernel.bandwidth}};
  std::uint64_t h = 1469598103934665603ull;
  const unsigned char* bytes = reinterpret_cast<const unsigned char*>(model.anchors.data());
  for (std::size_t i = 0; i < sizeof(double) * static_cast<std::size_t>(model.anchors.size());
       ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  j["anchors_fingerprint"] = std::string(buf);
  j["num_anchors"] = model.anchors.rows();
  json coeffs = json::array();
  for (int i = 0; i < model.dual_coeffs.size(); ++i) coeffs.push_back(model.dual_coeffs[i]);
  j["dual_coeffs"] = coeffs;
  json beta = json::array();
  for (int i = 0; i < model.beta.size(); ++i) beta.push_back(model.beta[i]);
  j["beta"] = beta;
  j["intercept"] = model.intercept;
  j["lambda1"] = model.lambda1;
  j["lambda2"] = model.lambda2;
  j["objective_value"] = model.objective_value;
  j["zero_objective"] = model.zero_objective;
  j["loss_normalizer"] = model.loss_normalizer;
  if (model.imputed) {
    j["imputed_score"] = model.imputed_score;
    j["impute_iterations"] = model.impute_iterations;
  }
  return j;
}

}  // namespace cshap
