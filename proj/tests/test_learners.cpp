#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "cshap/error.hpp"
#include "cshap/learners.hpp"
#include "cshap/synthetic.hpp"

using namespace cshap;

namespace {

MultimodalDataset tiny_regression(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  std::vector<int> dims) {
  MultimodalDataset ds;
  ds.layout = ModalityLayout::make(std::move(dims));
  ds.X = x;
  ds.y = y;
  ds.task = Task::regression();
  return ds;
}

std::vector<int> all_rows(int n) {
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace

TEST_CASE("regression baseline is the label mean and beats every grid constant") {
  Eigen::VectorXd y(2);
  y << 1.0, 3.0;
  auto base = fit_baseline(y, Task::regression());
  CHECK(base.constant == 2.0);

  Eigen::VectorXd labels(7);
  labels << -1.2, 0.4, 2.5, 2.5, 3.0, 7.7, 0.1;
  auto fitted = fit_baseline(labels, Task::regression());
  auto sse = [&](double c) { return (labels.array() - c).square().sum(); };
  double best = sse(fitted.constant);
  double lo = labels.minCoeff(), hi = labels.maxCoeff();
  for (int g = 0; g < 1000; ++g) {
    double c = lo + (hi - lo) * g / 999.0;
    CHECK(best <= sse(c) + 1e-12);
  }
}

TEST_CASE("classification baseline applies Laplace smoothing") {
  Eigen::VectorXd y(3);
  y << 0, 0, 1;
  auto base = fit_baseline(y, Task::classification(2));
  CHECK(base.class_probs[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(base.class_probs[1] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(base.class_probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(fit_baseline(Eigen::VectorXd(), Task::regression()), Error);
}

TEST_CASE("ols interpolates exact linear data") {
  Eigen::MatrixXd x(5, 1);
  x << 1, 2, 3, 4, 5;
  Eigen::VectorXd y = 2.0 * x.col(0);
  auto ds = tiny_regression(x, y, {1});
  auto model = fit_subset_model(ds, all_rows(5), 1u, LearnerSpec::ols());
  CHECK(model.weights[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(model.intercept == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("huge ridge penalty shrinks weights to zero, intercept to the mean") {
  Eigen::MatrixXd x(6, 2);
  x << 1, -1, 2, 0.5, -1, 1, 0.3, 2, -2, -1, 1.2, 0.4;
  Eigen::VectorXd y(6);
  y << 3, 1, 4, 1, 5, 9;
  auto ds = tiny_regression(x, y, {2});
  auto model = fit_subset_model(ds, all_rows(6), 1u, LearnerSpec::ridge(1e12));
  CHECK(model.weights.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(model.intercept == doctest::Approx(y.mean()).epsilon(1e-6));
}

TEST_CASE("ridge matches the direct normal-equations inverse") {
  SyntheticConfig config;
  config.p = 1;
  config.d = 3;
  config.n = 10;
  config.seed = 21;
  auto [ds, truth] = generate_synthetic_regression(config);
  (void)truth;
  const double lambda = 0.7;
  auto model = fit_subset_model(ds, all_rows(10), 1u, LearnerSpec::ridge(lambda));

  Eigen::MatrixXd z(10, 4);
  z.col(0).setOnes();
  z.rightCols(3) = ds.X;
  Eigen::MatrixXd penalty = lambda * Eigen::MatrixXd::Identity(4, 4);
  penalty(0, 0) = 0.0;  // unpenalized intercept
  Eigen::VectorXd w = (z.transpose() * z + penalty).inverse() * z.transpose() * ds.y;
  CHECK(std::abs(model.intercept - w[0]) <= 1e-8);
  CHECK((model.weights - w.tail(3)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("ols on duplicated informative columns advises ridge") {
  Eigen::MatrixXd x(6, 2);
  x.col(0) << 1, 2, 3, 4, 5, 6;
  x.col(1) = x.col(0);
  Eigen::VectorXd y = x.col(0);
  auto ds = tiny_regression(x, y, {2});
  CHECK_THROWS_WITH_AS(fit_subset_model(ds, all_rows(6), 1u, LearnerSpec::ols()),
                       doctest::Contains("ridge"), Error);
}

TEST_CASE("ols ignores identically zero columns instead of failing") {
  Eigen::MatrixXd x(6, 2);
  x.col(0) << 1, 2, 3, 4, 5, 6;
  x.col(1).setZero();
  Eigen::VectorXd y = 3.0 * x.col(0);
  auto ds = tiny_regression(x, y, {1, 1});
  auto model = fit_subset_model(ds, all_rows(6), 0b11u, LearnerSpec::ols());
  CHECK(model.weights[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(model.weights[1] == 0.0);
}

TEST_CASE("softmax with zero parameters predicts the uniform distribution") {
  Predictor model;
  model.task = Task::classification(10);
  model.W = Eigen::MatrixXd::Zero(10, 3);
  model.b = Eigen::VectorXd::Zero(10);
  model.subset = 1;
  auto pred = predict(model, Eigen::VectorXd::Zero(3));
  for (int c = 0; c < 10; ++c) CHECK(pred.probs[c] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("softmax learns a separable two-class problem") {
  Eigen::MatrixXd x(8, 1);
  x << -2, -1.5, -1, -0.5, 0.5, 1, 1.5, 2;
  Eigen::VectorXd y(8);
  y << 0, 0, 0, 0, 1, 1, 1, 1;
  MultimodalDataset ds;
  ds.layout = ModalityLayout::make({1});
  ds.X = x;
  ds.y = y;
  ds.task = Task::classification(2);
  auto model = fit_subset_model(ds, all_rows(8), 1u, LearnerSpec::softmax(0.5, 400, 0.0));
  Eigen::VectorXd left(1), right(1);
  left << -1.8;
  right << 1.8;
  CHECK(predict(model, left).probs[0] > 0.9);
  CHECK(predict(model, right).probs[1] > 0.9);
}

TEST_CASE("softmax prediction normalizes with positive entries") {
  SyntheticConfig config;
  config.p = 2;
  config.d = 2;
  config.n = 40;
  config.seed = 3;
  auto [reg, truth] = generate_synthetic_regression(config);
  (void)truth;
  MultimodalDataset ds = reg;
  ds.task = Task::classification(3);
  for (int i = 0; i < ds.n(); ++i) ds.y[i] = i % 3;
  auto model = fit_subset_model(ds, all_rows(ds.n()), 0b11u, LearnerSpec::softmax(0.1, 50, 1e-3));
  for (int i = 0; i < 5; ++i) {
    auto pred = predict(model, ds.X.row(i).transpose());
    CHECK(pred.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pred.probs.minCoeff() >= 1e-12);
  }
}

TEST_CASE("prediction rejects width mismatches") {
  Predictor model;
  model.task = Task::regression();
  model.weights = Eigen::VectorXd::Zero(2);
  model.intercept = 0.5;
  model.subset = 1;
  CHECK(predict(model, Eigen::VectorXd::Zero(2)).value == 0.5);
  CHECK_THROWS_AS(predict(model, Eigen::VectorXd::Zero(3)), Error);
}

TEST_CASE("loss handles the documented cases") {
  CHECK(loss(Task::regression(), 1.0, {1.0, {}}) == 0.0);

  Prediction perfect;
  perfect.probs = Eigen::VectorXd(2);
  perfect.probs << 1.0, 0.0;
  bool clamped = false;
  double l = loss(Task::classification(2), 0.0, perfect, &clamped);
  CHECK(clamped);
  CHECK(l == doctest::Approx(0.0).epsilon(1e-9));

  Prediction uniform;
  uniform.probs = Eigen::VectorXd::Constant(10, 0.1);
  CHECK(loss(Task::classification(10), 1.0, uniform) ==
        doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("train_all_subsets enumerates every subset") {
  SyntheticConfig config;
  config.p = 2;
  config.d = 1;
  config.n = 30;
  config.seed = 8;
  auto [ds, truth] = generate_synthetic_regression(config);
  (void)truth;
  auto cache = train_all_subsets(ds, all_rows(ds.n()), LearnerSpec::ols());
  CHECK(cache.models.size() == 4);
  for (std::uint32_t mask = 1; mask < 4; ++mask) CHECK(cache.at(mask).subset == mask);
  CHECK_THROWS_AS(cache.at(0), Error);
  CHECK_THROWS_AS(cache.at(9), Error);
}

TEST_CASE("train_all_subsets rejects p over the cap") {
  MultimodalDataset ds;
  ds.layout = ModalityLayout::make(std::vector<int>(16, 1));
  ds.X = Eigen::MatrixXd::Zero(4, 16);
  ds.y = Eigen::VectorXd::Zero(4);
  ds.task = Task::regression();
  CHECK_THROWS_WITH_AS(train_all_subsets(ds, all_rows(4), LearnerSpec::ols()),
                       doctest::Contains("exponential"), Error);
}

TEST_CASE("training twice gives bit-identical caches") {
  SyntheticConfig config;
  config.p = 3;
  config.d = 2;
  config.n = 60;
  config.seed = 15;
  auto [ds, truth] = generate_synthetic_regression(config);
  (void)truth;
  auto c1 = train_all_subsets(ds, all_rows(ds.n()), LearnerSpec::ridge(0.1), 2);
  auto c2 = train_all_subsets(ds, all_rows(ds.n()), LearnerSpec::ridge(0.1), 1);
  for (std::uint32_t mask = 1; mask < c1.models.size(); ++mask) {
    CHECK((c1.at(mask).weights - c2.at(mask).weights).cwiseAbs().maxCoeff() == 0.0);
    CHECK(c1.at(mask).intercept == c2.at(mask).intercept);
  }
}

TEST_CASE("noiseless utility is monotone along subset chains") {
  SyntheticConfig config;
  config.p = 3;
  config.d = 2;
  config.n = 600;
  config.noise_sd = 1e-12;
  config.seed = 33;
  auto [ds, truth] = generate_synthetic_regression(config);
  (void)truth;
  auto splits = split(ds.n(), 4);
  auto cache = train_all_subsets(ds, splits.train, LearnerSpec::ols());

  auto mean_val = [&](std::uint32_t mask) {
    double total = 0;
    for (int i : splits.calib) {
      double base = loss(ds.task, ds.y[i], predict(cache.baseline));
      double with =
          mask == 0 ? base
                    : loss(ds.task, ds.y[i],
                           predict(cache.at(mask),
                                   restrict_features(ds.layout, mask, ds.X.row(i).transpose())));
      total += base - with;
    }
    return total / splits.calib.size();
  };

  for (std::uint32_t mask = 0; mask < 8; ++mask) {
    for (int j = 0; j < 3; ++j) {
      if (mask & (1u << j)) continue;
      CHECK(mean_val(mask | (1u << j)) >= mean_val(mask) - 1e-6);
    }
  }
}

TEST_CASE("model cache survives a save/load round trip") {
  SyntheticConfig config;
  config.p = 2;
  config.d = 2;
  config.n = 40;
  config.seed = 12;
  auto [ds, truth] = generate_synthetic_regression(config);
  (void)truth;
  auto cache = train_all_subsets(ds, all_rows(ds.n()), LearnerSpec::ridge(0.5));

  auto dir = std::filesystem::temp_directory_path() / "cshap_cache_test";
  std::filesystem::remove_all(dir);
  save_model_cache(cache, dir, LearnerSpec::ridge(0.5), 12, dataset_fingerprint(ds));
  auto loaded = load_model_cache(dir);

  CHECK(loaded.p == cache.p);
  CHECK(loaded.baseline.constant == cache.baseline.constant);
  for (std::uint32_t mask = 1; mask < cache.models.size(); ++mask) {
    CHECK((loaded.at(mask).weights - cache.at(mask).weights).cwiseAbs().maxCoeff() == 0.0);
    CHECK(loaded.at(mask).intercept == cache.at(mask).intercept);
  }
}

TEST_CASE("softmax divergence reports a convergence error") {
  Eigen::MatrixXd x(4, 1);
  x << -2, -1, 1, 2;
  Eigen::VectorXd y(4);
  y << 0, 0, 1, 1;
  MultimodalDataset ds;
  ds.layout = ModalityLayout::make({1});
  ds.X = x;
  ds.y = y;
  ds.task = Task::classification(2);
  // lr * l2 >> 2 makes the penalized iterates blow up geometrically.
  CHECK_THROWS_WITH_AS(fit_subset_model(ds, all_rows(4), 1u, LearnerSpec::softmax(10.0, 200, 1.0)),
                       doctest::Contains("diverged"), Error);
}
