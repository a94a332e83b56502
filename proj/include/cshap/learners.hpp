#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cshap/dataset.hpp"

namespace cshap {

struct LearnerSpec {
  enum class Kind { ols, ridge, softmax };
  Kind kind = Kind::ols;
  double lambda = 0.0;  // ridge penalty
  double lr = 0.1;      // softmax step size
  int epochs = 200;
  double l2 = 0.0;      // softmax weight penalty

  static LearnerSpec ols() { return {}; }
  static LearnerSpec ridge(double lambda) {
    LearnerSpec s;
    s.kind = Kind::ridge;
    s.lambda = lambda;
    return s;
  }
  static LearnerSpec softmax(double lr, int epochs, double l2) {
    LearnerSpec s;
    s.kind = Kind::softmax;
    s.lr = lr;
    s.epochs = epochs;
    s.l2 = l2;
    return s;
  }
};

// Constant predictor for the empty modality set.
struct BaselinePredictor {
  Task task;
  double constant = 0.0;          // regression: training-label mean
  Eigen::VectorXd class_probs;    // classification: smoothed class frequencies
};

// One fitted model for a non-empty modality subset.
struct Predictor {
  std::uint32_t subset = 0;
  Task task;
  // linear (ols / ridge)
  Eigen::VectorXd weights;
  double intercept = 0.0;
  // softmax
  Eigen::MatrixXd W;  // classes x features
  Eigen::VectorXd b;  // classes

  int feature_width() const {
    return task.is_classification() ? static_cast<int>(W.cols())
                                    : static_cast<int>(weights.size());
  }
};

struct Prediction {
  double value = 0.0;       // regression
  Eigen::VectorXd probs;    // classification, sums to 1
};

// Probability floor applied inside the cross-entropy loss.
inline constexpr double kProbFloor = 1e-12;

BaselinePredictor fit_baseline(const Eigen::VectorXd& y_train, const Task& task);

Predictor fit_subset_model(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                           std::uint32_t subset, const LearnerSpec& spec);

Prediction predict(const Predictor& model, const Eigen::VectorXd& x_subset);
Prediction predict(const BaselinePredictor& model);

// Squared error for regression, negative log of the true-class probability
// for classification (probability clamped to [kProbFloor, 1 - kProbFloor];
// `clamped`, when given, reports whether the floor fired).
double loss(const Task& task, double y, const Prediction& pred, bool* clamped = nullptr);

// One predictor per non-empty subset plus the no-modality baseline.
struct ModelCache {
  int p = 0;
  BaselinePredictor baseline;
  std::vector<Predictor> models;  // indexed by bitmask; slot 0 unused

  const Predictor& at(std::uint32_t mask) const;
};

inline constexpr int kDefaultSubsetCap = 15;

// Fits all 2^p - 1 subset models (in parallel) plus the baseline. Refuses
// p > p_cap: the enumeration is exponential by design.
ModelCache train_all_subsets(const MultimodalDataset& ds, const std::vector<int>& train_rows,
                             const LearnerSpec& spec, int threads = 0,
                             int p_cap = kDefaultSubsetCap);

// Directory of JSON parameter files keyed by hex bitmask, plus a manifest
// recording the learner spec, seed and data fingerprint.
void save_model_cache(const ModelCache& cache, const std::filesystem::path& dir,
                      const LearnerSpec& spec, std::uint64_t seed,
                      const std::string& data_fingerprint);
ModelCache load_model_cache(const std::filesystem::path& dir);

}  // namespace cshap
