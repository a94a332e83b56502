#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cshap/dataset.hpp"
#include "cshap/learners.hpp"
#include "cshap/quantile.hpp"
#include "cshap/shapley.hpp"

namespace cshap {

struct LambdaPolicy {
  enum class Kind { fixed, cv };
  Kind kind = Kind::fixed;
  double lambda1 = 0.01;  // fixed policy; 0.01/0.01 matches the image-benchmark preset
  double lambda2 = 0.01;
  std::vector<std::pair<double, double>> grid;  // cv policy
  int folds = 5;

  static LambdaPolicy fixed(double l1, double l2) {
    LambdaPolicy p;
    p.kind = Kind::fixed;
    p.lambda1 = l1;
    p.lambda2 = l2;
    return p;
  }
  // Default grid {1e-3, 1e-2, 1e-1, 1, 10} x same.
  static LambdaPolicy cv_default();
};

struct ConformalConfig {
  double alpha = 0.1;        // miscoverage
  int q = 0;                 // selection cap; 0 means "use p"
  LearnerSpec learner;
  KernelSpec kernel = KernelSpec::gaussian_median();
  std::vector<int> d_omega;  // per modality; empty means full dimension
  LambdaPolicy lambdas;
  TestPointMode test_mode = TestPointMode::omit;
  std::uint64_t seed = 0;
  int threads = 0;
  int p_cap = kDefaultSubsetCap;
  SolveOptions solver;
};

struct ModalityInterval {
  int modality = 0;
  double lo = 0.0;  // h^{alpha/(2q)}(x)
  double hi = 0.0;  // h^{1-alpha/(2q)}(x)
  bool crossing_repaired = false;
};

struct SelectionResult {
  std::vector<int> selected;  // descending score, ties by ascending index; size <= q
  Eigen::VectorXd scores;     // upper quantile per modality
  double threshold = 0.0;     // q-th order statistic of the scores

  std::uint32_t mask() const;
};

struct SubgroupSpec {
  std::vector<int> indices;    // covariate coordinates to pin
  std::vector<double> values;  // target levels, same length
};

struct HypothesisResult {
  int modality = 0;
  SubgroupSpec subgroup;
  double mean = 0.0;
  double sd = 0.0;
  double t_stat = 0.0;
  int df = 0;
  double p_value = 1.0;
  bool degenerate = false;
};

// Runs Algorithm 1's shared stages once (split, 2^p subset fits, Shapley
// table, feature map, kernel resolution) and serves interval / selection
// queries for any number of test points.
class ConformalPipeline {
 public:
  ConformalPipeline(const MultimodalDataset& ds, const ConformalConfig& config);

  int p() const { return dataset_.layout.p; }
  int effective_q() const { return q_; }
  // (alpha/(2q), 1 - alpha/(2q)); the one-argument form serves the
  // selection-path sweep, where q varies over one pipeline.
  std::pair<double, double> levels() const { return levels(q_); }
  std::pair<double, double> levels(int q) const;

  const SplitIndices& splits() const { return splits_; }
  const ModelCache& cache() const { return cache_; }
  const ShapleyTable& table() const { return table_; }
  const FeatureMap& feature_map() const { return fmap_; }
  const KernelSpec& kernel() const { return kernel_; }
  const Eigen::MatrixXd& calibration_features() const { return calib_features_; }
  const ConformalConfig& config() const { return config_; }

  // Fitted model for modality j at quantile level tau (omit mode; fitted once
  // and cached). In impute mode use the *_at queries, which refit per point.
  const QuantileModel& quantile_model(int modality, double tau);

  // Fits every (modality, tau) model in parallel; a no-op for pairs already
  // cached.
  void ensure_models(const std::vector<double>& taus);

  std::vector<ModalityInterval> intervals_at(const Eigen::VectorXd& x) {
    return intervals_at(x, q_);
  }
  std::vector<ModalityInterval> intervals_at(const Eigen::VectorXd& x, int q);
  SelectionResult select_at(const Eigen::VectorXd& x) { return select_at(x, q_); }
  SelectionResult select_at(const Eigen::VectorXd& x, int q);

  // Upper-quantile scores at level 1 - alpha/(2q) for all modalities.
  Eigen::VectorXd upper_scores_at(const Eigen::VectorXd& x) { return upper_scores_at(x, q_); }
  Eigen::VectorXd upper_scores_at(const Eigen::VectorXd& x, int q);

  // Median-quantile model over explicit covariates (for hypothesis tests).
  QuantileModel fit_median_on_covariates(const Eigen::MatrixXd& z_rows, int modality);

 private:
  QuantileModel fit_model(int modality, double tau, const Eigen::VectorXd* test_point) const;
  std::pair<double, double> lambdas_for(int modality, double tau) const;

  MultimodalDataset dataset_;
  ConformalConfig config_;
  int q_ = 1;
  SplitIndices splits_;
  ModelCache cache_;
  ShapleyTable table_;
  FeatureMap fmap_;
  KernelSpec kernel_;
  Eigen::MatrixXd calib_features_;
  std::map<std::pair<int, long>, QuantileModel> models_;  // (modality, level key)
  mutable std::map<std::pair<int, long>, std::pair<double, double>> cv_choice_;
};

// Algorithm 1 for a single test input.
std::vector<ModalityInterval> conformal_shapley_intervals(const MultimodalDataset& ds,
                                                          const Eigen::VectorXd& x_new,
                                                          const ConformalConfig& config);

// Keep the (up to) q modalities whose upper score reaches the q-th order
// statistic and is positive; ties at the threshold resolved toward smaller
// indices.
SelectionResult select_modalities(const Eigen::VectorXd& upper_scores, int q);

struct PathPoint {
  int q = 0;
  double mse = 0.0;       // regression
  double r2 = 0.0;
  double cross_entropy = 0.0;  // classification
  double accuracy = 0.0;
  double mean_selected = 0.0;  // average |selected| across test points
};

struct PathReport {
  bool classification = false;
  std::vector<PathPoint> points;
};

// Selection paths over labeled test rows: for each q, select per test point,
// predict with the cached subset model (baseline when nothing is selected)
// and aggregate test metrics.
PathReport selection_path(const MultimodalDataset& ds, const MultimodalDataset& test_rows,
                          const ConformalConfig& config, const std::vector<int>& q_values);

// Exhaustive empirical-utility maximizer over subsets of size <= q; ties go
// to the smaller bitmask. Returns (mask, mean value over rows).
std::pair<std::uint32_t, double> brute_force_optimal_subset(const MultimodalDataset& ds,
                                                            const std::vector<int>& rows,
                                                            const ModelCache& cache, int q);

// t-test of H0: E[h^0.5(Z*)] = 0 with the subgroup coordinates pinned.
HypothesisResult conditional_hypothesis_test(const QuantileModel& median_model,
                                             const Eigen::MatrixXd& z_rows,
                                             const SubgroupSpec& subgroup, int modality);

// kappa sqrt(J0 / lambda1) + ||Omega(x)|| sqrt(J0 / lambda2): the half-width
// bound implied by comparing the solution against the zero function.
double rkhs_width_bound(const QuantileModel& model, const Eigen::VectorXd& x, double kappa);

nlohmann::json intervals_to_json(const std::vector<ModalityInterval>& intervals,
                                 double level_lo, double level_hi);
nlohmann::json selection_to_json(const SelectionResult& result);
nlohmann::json hypothesis_to_json(const HypothesisResult& result, int m);
void save_path_csv(const PathReport& report, const std::filesystem::path& path);

}  // namespace cshap
