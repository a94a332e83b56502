#include "cshap/learners.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cshap/error.hpp"
#include "cshap/parallel.hpp"

namespace cshap {

using nlohmann::json;

BaselinePredictor fit_baseline(const Eigen::VectorXd& y_train, const Task& task) {
  if (y_train.size() == 0) fail(ErrorKind::config, "fit_baseline: empty label set");
  BaselinePredictor base;
  base.task = task;
  if (task.is_classification()) {
    const int classes = task.num_classes;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(classes);
    for (int i = 0; i < y_train.size(); ++i) counts[static_cast<int>(y_train[i])] += 1.0;
    // Laplace smoothing keeps every class probability positive.
    base.class_probs = (counts.array() + 1.0) / (static_cast<double>(y_train.size()) + classes);
  } else {
    base.constant = y_train.mean();
  }
  return base;
}

namespace {

// Linear least squares on [1 | X_S]. Columns that are identically zero on the
// training rows carry no information and are excluded from the solve (their
// weight is zero); any other rank deficiency under OLS is an error.
Predictor fit_linear(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                     std::uint32_t subset, const LearnerSpec& spec) {
  auto cols = subset_columns(ds.layout, subset);
  const int rows = static_cast<int>(train_rows.size());
  const int k = static_cast<int>(cols.size());

  Eigen::MatrixXd xs(rows, k);
  Eigen::VectorXd y(rows);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < k; ++c) xs(i, c) = ds.X(train_rows[i], cols[c]);
    y[i] = ds.y[train_rows[i]];
  }

  std::vector<int> active;
  for (int c = 0; c < k; ++c)
    if (xs.col(c).cwiseAbs().maxCoeff() != 0.0) active.push_back(c);

  const int ka = static_cast<int>(active.size());
  Eigen::MatrixXd z(rows, ka + 1);
  z.col(0).setOnes();
  for (int c = 0; c < ka; ++c) z.col(c + 1) = xs.col(active[c]);

  Eigen::VectorXd w;
  if (spec.kind == LearnerSpec::Kind::ols) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    if (qr.rank() < ka + 1)
      fail(ErrorKind::numeric,
           "OLS normal equations are singular for subset mask " + std::to_string(subset) +
               " (collinear or underdetermined columns); use a ridge learner");
    w = qr.solve(y);
  } else {
    // Normal equations with an unpenalized intercept.
    Eigen::MatrixXd gram = z.transpose() * z;
    for (int c = 1; c <= ka; ++c) gram(c, c) += spec.lambda;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success)
      fail(ErrorKind::numeric, "ridge solve failed for subset mask " + std::to_string(subset));
    w = ldlt.solve(z.transpose() * y);
  }
  if (!w.allFinite())
    fail(ErrorKind::numeric, "linear fit produced non-finite weights for subset mask " +
                                 std::to_string(subset) + "; use a ridge learner");

  Predictor model;
  model.subset = subset;
  model.task = ds.task;
  model.intercept = w[0];
  model.weights = Eigen::VectorXd::Zero(k);
  for (int c = 0; c < ka; ++c) model.weights[active[c]] = w[c + 1];
  return model;
}

// Full-batch gradient descent on cross-entropy with an L2 weight penalty.
// Deterministic: zero initialization, fixed step size.
Predictor fit_softmax(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                      std::uint32_t subset, const LearnerSpec& spec) {
  auto cols = subset_columns(ds.layout, subset);
  const int rows = static_cast<int>(train_rows.size());
  const int k = static_cast<int>(cols.size());
  const int classes = ds.task.num_classes;

  Eigen::MatrixXd xs(rows, k);
  std::vector<int> labels(rows);
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < k; ++c) xs(i, c) = ds.X(train_rows[i], cols[c]);
    labels[i] = static_cast<int>(ds.y[train_rows[i]]);
  }

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(classes, k);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(classes);

  double prev_loss = std::numeric_limits<double>::infinity();
  int increases = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    Eigen::MatrixXd logits = xs * w.transpose();
    logits.rowwise() += b.transpose();
    Eigen::MatrixXd probs(rows, classes);
    double ce = 0.0;
    for (int i = 0; i < rows; ++i) {
      double mx = logits.row(i).maxCoeff();
      Eigen::ArrayXd e = (logits.row(i).array() - mx).exp();
      probs.row(i) = e / e.sum();
      ce -= std::log(std::max(probs(i, labels[i]), kProbFloor));
    }
    ce /= rows;
    double objective = ce + 0.5 * spec.l2 * w.squaredNorm();
    if (objective > prev_loss) {
      if (++increases >= 5) {
        std::ostringstream msg;
        msg << "softmax training diverged for subset mask " << subset << ": loss rose for 5 "
            << "consecutive epochs (epoch " << epoch << ", objective " << objective
            << ", lr " << spec.lr << "); lower the learning rate";
        fail(ErrorKind::convergence, msg.str());
      }
    } else {
      increases = 0;
    }
    prev_loss = objective;

    for (int i = 0; i < rows; ++i) probs(i, labels[i]) -= 1.0;
    Eigen::MatrixXd grad_w = (probs.transpose() * xs) / rows + spec.l2 * w;
    Eigen::VectorXd grad_b = probs.colwise().sum().transpose() / rows;
    w -= spec.lr * grad_w;
    b -= spec.lr * grad_b;
  }

  Predictor model;
  model.subset = subset;
  model.task = ds.task;
  model.W = std::move(w);
  model.b = std::move(b);
  return model;
}

}  // namespace

Predictor fit_subset_model(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                           std::uint32_t subset, const LearnerSpec& spec) {
  if (subset == 0) fail(ErrorKind::config, "fit_subset_model: empty subset is the baseline");
  if (train_rows.empty()) fail(ErrorKind::config, "fit_subset_model: no training rows");
  const bool wants_softmax = spec.kind == LearnerSpec::Kind::softmax;
  if (wants_softmax != ds.task.is_classification())
    fail(ErrorKind::config, "fit_subset_model: learner kind incompatible with task");
  if (spec.kind == LearnerSpec::Kind::ridge && spec.lambda < 0)
    fail(ErrorKind::config, "fit_subset_model: ridge lambda must be >= 0");
  if (wants_softmax && (spec.lr <= 0 || spec.epochs < 1))
    fail(ErrorKind::config, "fit_subset_model: softmax needs lr > 0 and epochs >= 1");

  return wants_softmax ? fit_softmax(ds, train_rows, subset, spec)
                       : fit_linear(ds, train_rows, subset, spec);
}

Prediction predict(const Predictor& model, const Eigen::VectorXd& x_subset) {
  if (x_subset.size() != model.feature_width())
    fail(ErrorKind::config, "predict: feature width " + std::to_string(x_subset.size()) +
                                " does not match model width " +
                                std::to_string(model.feature_width()));
  Prediction out;
  if (model.task.is_classification()) {
    Eigen::VectorXd logits = model.W * x_subset + model.b;
    double mx = logits.maxCoeff();
    Eigen::ArrayXd e = (logits.array() - mx).exp();
    out.probs = e / e.sum();
  } else {
    out.value = model.intercept + model.weights.dot(x_subset);
  }
  return out;
}

Prediction predict(const BaselinePredictor& model) {
  Prediction out;
  if (model.task.is_classification())
    out.probs = model.class_probs;
  else
    out.value = model.constant;
  return out;
}

double loss(const Task& task, double y, const Prediction& pred, bool* clamped) {
  if (clamped) *clamped = false;
  if (task.is_classification()) {
    double p = pred.probs[static_cast<int>(y)];
    double clipped = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
    if (clamped && clipped != p) *clamped = true;
    return -std::log(clipped);
  }
  double r = y - pred.value;
  return r * r;
}

const Predictor& ModelCache::at(std::uint32_t mask) const {
  if (mask == 0 || mask >= models.size() || models[mask].feature_width() == 0)
    fail(ErrorKind::missing, "model cache has no entry for bitmask " + std::to_string(mask));
  return models[mask];
}

ModelCache train_all_subsets(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                             const LearnerSpec& spec, int threads, int p_cap) {
  const int p = ds.layout.p;
  if (p > p_cap)
    fail(ErrorKind::config, "train_all_subsets: p = " + std::to_string(p) + " exceeds the cap " +
                                std::to_string(p_cap) + "; fitting 2^p models is exponential");

  ModelCache cache;
  cache.p = p;
  Eigen::VectorXd y_train(train_rows.size());
  for (std::size_t i = 0; i < train_rows.size(); ++i) y_train[i] = ds.y[train_rows[i]];
  cache.baseline = fit_baseline(y_train, ds.task);

  const std::uint32_t count = 1u << p;
  cache.models.resize(count);
  parallel_for(1, static_cast<int>(count), threads, [&](int mask) {
    cache.models[mask] = fit_subset_model(ds, train_rows, static_cast<std::uint32_t>(mask), spec);
  });
  return cache;
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  return v;
}

std::string mask_hex(std::uint32_t mask) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04x", mask);
  return buf;
}

json task_to_json(const Task& task) {
  json j;
  j["kind"] = task.is_classification() ? "classification" : "regression";
  if (task.is_classification()) j["classes"] = task.num_classes;
  return j;
}

Task task_from_json(const json& j) {
  if (j.at("kind") == "classification") return Task::classification(j.at("classes").get<int>());
  return Task::regression();
}

}  // namespace

void save_model_cache(const ModelCache& cache, const std::filesystem::path& dir,
                      const LearnerSpec& spec, std::uint64_t seed,
                      const std::string& data_fingerprint) {
  std::filesystem::create_directories(dir);

  json manifest;
  manifest["p"] = cache.p;
  manifest["seed"] = seed;
  manifest["data_fingerprint"] = data_fingerprint;
  json spec_json;
  spec_json["kind"] = spec.kind == LearnerSpec::Kind::ols      ? "ols"
                      : spec.kind == LearnerSpec::Kind::ridge  ? "ridge"
                                                               : "softmax";
  spec_json["lambda"] = spec.lambda;
  spec_json["lr"] = spec.lr;
  spec_json["epochs"] = spec.epochs;
  spec_json["l2"] = spec.l2;
  manifest["learner"] = spec_json;
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

  json base;
  base["task"] = task_to_json(cache.baseline.task);
  if (cache.baseline.task.is_classification())
    base["class_probs"] = vector_to_json(cache.baseline.class_probs);
  else
    base["constant"] = cache.baseline.constant;
  std::ofstream(dir / "baseline.json") << base.dump(2) << '\n';

  for (std::uint32_t mask = 1; mask < cache.models.size(); ++mask) {
    const Predictor& m = cache.models[mask];
    json j;
    j["subset"] = m.subset;
    j["task"] = task_to_json(m.task);
    if (m.task.is_classification()) {
      json w = json::array();
      for (int r = 0; r < m.W.rows(); ++r) w.push_back(vector_to_json(m.W.row(r)));
      j["W"] = w;
      j["b"] = vector_to_json(m.b);
    } else {
      j["intercept"] = m.intercept;
      j["weights"] = vector_to_json(m.weights);
    }
    std::ofstream(dir / ("model_" + mask_hex(mask) + ".json")) << j.dump(2) << '\n';
  }
}

ModelCache load_model_cache(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) fail(ErrorKind::missing, "model cache manifest not found in " + dir.string());
  json manifest;
  mf >> manifest;

  ModelCache cache;
  cache.p = manifest.at("p").get<int>();

  json base;
  std::ifstream bf(dir / "baseline.json");
  if (!bf) fail(ErrorKind::missing, "baseline.json not found in " + dir.string());
  bf >> base;
  cache.baseline.task = task_from_json(base.at("task"));
  if (cache.baseline.task.is_classification())
    cache.baseline.class_probs = vector_from_json(base.at("class_probs"));
  else
    cache.baseline.constant = base.at("constant").get<double>();

  cache.models.resize(1u << cache.p);
  for (std::uint32_t mask = 1; mask < cache.models.size(); ++mask) {
    std::ifstream in(dir / ("model_" + mask_hex(mask) + ".json"));
    if (!in) fail(ErrorKind::missing, "missing cache entry for bitmask " + std::to_string(mask));
    json j;
    in >> j;
    Predictor m;
    m.subset = j.at("subset").get<std::uint32_t>();
    m.task = task_from_json(j.at("task"));
    if (m.task.is_classification()) {
      const auto& w = j.at("W");
      m.W.resize(w.size(), w.empty() ? 0 : w[0].size());
      for (std::size_t r = 0; r < w.size(); ++r)
        m.W.row(static_cast<Eigen::Index>(r)) = vector_from_json(w[r]).transpose();
      m.b = vector_from_json(j.at("b"));
    } else {
      m.intercept = j.at("intercept").get<double>();
      m.weights = vector_from_json(j.at("weights"));
    }
    cache.models[mask] = std::move(m);
  }
  return cache;
}

}  // namespace cshap
