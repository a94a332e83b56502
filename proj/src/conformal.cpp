#include "cshap/conformal.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cshap/error.hpp"
#include "cshap/parallel.hpp"
#include "cshap/rng.hpp"
#include "cshap/stats.hpp"

namespace cshap {

using nlohmann::json;

namespace {

long level_key(double tau) { return std::llround(tau * 1e12); }

template <typename Fn>
auto run_stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage ") + name + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

LambdaPolicy LambdaPolicy::cv_default() {
  LambdaPolicy p;
  p.kind = Kind::cv;
  const double values[] = {1e-3, 1e-2, 1e-1, 1.0, 10.0};
  for (double l1 : values)
    for (double l2 : values) p.grid.emplace_back(l1, l2);
  return p;
}

std::uint32_t SelectionResult::mask() const {
  std::uint32_t m = 0;
  for (int j : selected) m |= 1u << j;
  return m;
}

ConformalPipeline::ConformalPipeline(const MultimodalDataset& ds, const ConformalConfig& config)
    : dataset_(ds), config_(config) {
  const int p = dataset_.layout.p;
  if (!(config_.alpha > 0.0 && config_.alpha < 1.0))
    fail(ErrorKind::config, "conformal: alpha must lie in (0, 1)");
  q_ = config_.q == 0 ? p : config_.q;
  if (q_ < 1 || q_ > p) fail(ErrorKind::config, "conformal: q must lie in {1,...,p}");
  double lo = config_.alpha / (2.0 * q_);
  if (!(lo > 0.0 && lo < 0.5)) fail(ErrorKind::config, "conformal: alpha/(2q) must lie in (0, 0.5)");

  splits_ = run_stage("split", [&] { return split(dataset_.n(), config_.seed); });
  cache_ = run_stage("train", [&] {
    return train_all_subsets(dataset_, splits_.train, config_.learner, config_.threads,
                             config_.p_cap);
  });
  table_ = run_stage("shapley", [&] {
    return shapley_table(dataset_, splits_, cache_, config_.threads);
  });

  calib_features_.resize(splits_.m(), dataset_.layout.width());
  for (int i = 0; i < splits_.m(); ++i) calib_features_.row(i) = dataset_.X.row(splits_.calib[i]);

  std::vector<int> d_omega = config_.d_omega;
  if (d_omega.empty()) d_omega = dataset_.layout.dims;
  fmap_ = run_stage("feature-map", [&] {
    return fit_feature_map(calib_features_, dataset_.layout, d_omega);
  });
  kernel_ = resolve_bandwidth(config_.kernel, calib_features_);
}

std::pair<double, double> ConformalPipeline::levels(int q) const {
  if (q < 1 || q > p()) fail(ErrorKind::config, "conformal: q must lie in {1,...,p}");
  return {config_.alpha / (2.0 * q), 1.0 - config_.alpha / (2.0 * q)};
}

std::pair<double, double> ConformalPipeline::lambdas_for(int modality, double tau) const {
  if (config_.lambdas.kind == LambdaPolicy::Kind::fixed)
    return {config_.lambdas.lambda1, config_.lambdas.lambda2};
  auto key = std::make_pair(modality, level_key(tau));
  auto it = cv_choice_.find(key);
  if (it != cv_choice_.end()) return it->second;
  std::uint64_t cv_seed =
      Rng::mix(config_.seed ^ (0x9E3779B9ull * (modality + 1) + level_key(tau)));
  auto choice = run_stage("lambda-cv", [&] {
    return cross_validate_lambdas(table_.values.col(modality), calib_features_, kernel_, fmap_,
                                  tau, config_.lambdas.grid, config_.lambdas.folds, cv_seed);
  });
  cv_choice_.emplace(key, choice);
  return choice;
}

QuantileModel ConformalPipeline::fit_model(int modality, double tau,
                                           const Eigen::VectorXd* test_point) const {
  auto [l1, l2] = lambdas_for(modality, tau);
  return run_stage("quantile-fit", [&] {
    return fit_quantile(table_.values.col(modality), calib_features_, kernel_, fmap_, tau, l1,
                        l2, test_point, config_.test_mode, config_.solver);
  });
}

const QuantileModel& ConformalPipeline::quantile_model(int modality, double tau) {
  auto key = std::make_pair(modality, level_key(tau));
  auto it = models_.find(key);
  if (it == models_.end()) {
    models_.emplace(key, fit_model(modality, tau, nullptr));
    it = models_.find(key);
  }
  return it->second;
}

void ConformalPipeline::ensure_models(const std::vector<double>& taus) {
  std::vector<std::pair<int, double>> jobs;
  for (double tau : taus)
    for (int j = 0; j < p(); ++j)
      if (!models_.count({j, level_key(tau)})) jobs.emplace_back(j, tau);
  if (jobs.empty()) return;
  // CV choices are cached under a mutex-free map; resolve them serially first.
  for (auto& [j, tau] : jobs) lambdas_for(j, tau);
  std::vector<QuantileModel> fitted(jobs.size());
  parallel_for(0, static_cast<int>(jobs.size()), config_.threads, [&](int i) {
    fitted[i] = fit_model(jobs[i].first, jobs[i].second, nullptr);
  });
  for (std::size_t i = 0; i < jobs.size(); ++i)
    models_.emplace(std::make_pair(jobs[i].first, level_key(jobs[i].second)),
                    std::move(fitted[i]));
}

std::vector<ModalityInterval> ConformalPipeline::intervals_at(const Eigen::VectorXd& x, int q) {
  auto [tau_lo, tau_hi] = levels(q);
  std::vector<ModalityInterval> out(p());
  if (config_.test_mode == TestPointMode::omit) {
    ensure_models({tau_lo, tau_hi});
    for (int j = 0; j < p(); ++j) {
      out[j].modality = j;
      out[j].lo = evaluate_quantile(quantile_model(j, tau_lo), x);
      out[j].hi = evaluate_quantile(quantile_model(j, tau_hi), x);
    }
  } else {
    for (int j = 0; j < p(); ++j) {  // resolve CV choices before the parallel fits
      lambdas_for(j, tau_lo);
      lambdas_for(j, tau_hi);
    }
    parallel_for(0, 2 * p(), config_.threads, [&](int slot) {
      int j = slot / 2;
      double tau = (slot % 2 == 0) ? tau_lo : tau_hi;
      QuantileModel model = fit_model(j, tau, &x);
      double value = evaluate_quantile(model, x);
      out[j].modality = j;
      (slot % 2 == 0 ? out[j].lo : out[j].hi) = value;
    });
  }
  for (auto& iv : out) {
    if (iv.lo > iv.hi) {
      std::swap(iv.lo, iv.hi);
      iv.crossing_repaired = true;
    }
  }
  return out;
}

Eigen::VectorXd ConformalPipeline::upper_scores_at(const Eigen::VectorXd& x, int q) {
  const double tau_hi = levels(q).second;
  Eigen::VectorXd scores(p());
  if (config_.test_mode == TestPointMode::omit) {
    ensure_models({tau_hi});
    for (int j = 0; j < p(); ++j) scores[j] = evaluate_quantile(quantile_model(j, tau_hi), x);
  } else {
    for (int j = 0; j < p(); ++j) lambdas_for(j, tau_hi);
    parallel_for(0, p(), config_.threads, [&](int j) {
      QuantileModel model = fit_model(j, tau_hi, &x);
      scores[j] = evaluate_quantile(model, x);
    });
  }
  return scores;
}

SelectionResult ConformalPipeline::select_at(const Eigen::VectorXd& x, int q) {
  return select_modalities(upper_scores_at(x, q), q);
}

QuantileModel ConformalPipeline::fit_median_on_covariates(const Eigen::MatrixXd& z_rows,
                                                          int modality) {
  KernelSpec kernel = resolve_bandwidth(config_.kernel, z_rows);
  auto [l1, l2] = config_.lambdas.kind == LambdaPolicy::Kind::fixed
                      ? std::make_pair(config_.lambdas.lambda1, config_.lambdas.lambda2)
                      : run_stage("lambda-cv", [&] {
                          return cross_validate_lambdas(
                              table_.values.col(modality), z_rows, kernel,
                              FeatureMap::identity(static_cast<int>(z_rows.cols())), 0.5,
                              config_.lambdas.grid, config_.lambdas.folds,
                              Rng::mix(config_.seed ^ (0xA5A5ull + modality)));
                        });
  return run_stage("quantile-fit", [&] {
    return fit_quantile(table_.values.col(modality), z_rows, kernel,
                        FeatureMap::identity(static_cast<int>(z_rows.cols())), 0.5, l1, l2,
                        nullptr, TestPointMode::omit, config_.solver);
  });
}

std::vector<ModalityInterval> conformal_shapley_intervals(const MultimodalDataset& ds,
                                                          const Eigen::VectorXd& x_new,
                                                          const ConformalConfig& config) {
  ConformalPipeline pipeline(ds, config);
  return pipeline.intervals_at(x_new);
}

SelectionResult select_modalities(const Eigen::VectorXd& upper_scores, int q) {
  const int p = static_cast<int>(upper_scores.size());
  if (q < 1 || q > p) fail(ErrorKind::config, "select_modalities: q must lie in {1,...,p}");

  std::vector<int> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (upper_scores[a] != upper_scores[b]) return upper_scores[a] > upper_scores[b];
    return a < b;
  });

  SelectionResult out;
  out.scores = upper_scores;
  out.threshold = upper_scores[order[q - 1]];
  for (int rank = 0; rank < q; ++rank) {
    int j = order[rank];
    if (upper_scores[j] > 0.0 && upper_scores[j] >= out.threshold) out.selected.push_back(j);
  }
  return out;
}

PathReport selection_path(const MultimodalDataset& ds, const MultimodalDataset& test_rows,
                          const ConformalConfig& config, const std::vector<int>& q_values) {
  if (q_values.empty()) fail(ErrorKind::usage, "selection_path: empty q list");
  if (test_rows.layout.width() != ds.layout.width())
    fail(ErrorKind::config, "selection_path: test rows do not match the dataset layout");
  for (int q : q_values)
    if (q < 1 || q > ds.layout.p)
      fail(ErrorKind::config, "selection_path: q value " + std::to_string(q) + " outside 1..p");

  PathReport report;
  report.classification = ds.task.is_classification();

  const int n_test = test_rows.n();
  double y_mean = test_rows.y.mean();
  double ss_tot = (test_rows.y.array() - y_mean).square().sum();

  ConformalPipeline pipeline(ds, config);
  for (int q : q_values) {
    if (config.test_mode == TestPointMode::omit) {
      auto [tau_lo, tau_hi] = pipeline.levels(q);
      pipeline.ensure_models({tau_lo, tau_hi});
    }

    PathPoint point;
    point.q = q;
    double se = 0.0, ce = 0.0;
    int correct = 0;
    long selected_total = 0;
    for (int i = 0; i < n_test; ++i) {
      Eigen::VectorXd x = test_rows.X.row(i).transpose();
      SelectionResult sel = pipeline.select_at(x, q);
      selected_total += static_cast<long>(sel.selected.size());
      std::uint32_t mask = sel.mask();
      Prediction pred =
          mask == 0 ? predict(pipeline.cache().baseline)
                    : predict(pipeline.cache().at(mask), restrict_features(ds.layout, mask, x));
      if (report.classification) {
        ce += loss(ds.task, test_rows.y[i], pred);
        int argmax = 0;
        pred.probs.maxCoeff(&argmax);
        if (argmax == static_cast<int>(test_rows.y[i])) ++correct;
      } else {
        double r = test_rows.y[i] - pred.value;
        se += r * r;
      }
    }
    if (report.classification) {
      point.cross_entropy = ce / n_test;
      point.accuracy = static_cast<double>(correct) / n_test;
    } else {
      point.mse = se / n_test;
      point.r2 = ss_tot > 0 ? 1.0 - se / ss_tot : 0.0;
    }
    point.mean_selected = static_cast<double>(selected_total) / n_test;
    report.points.push_back(point);
  }
  return report;
}

std::pair<std::uint32_t, double> brute_force_optimal_subset(const MultimodalDataset& ds,
                                                            const std::vector<int>& rows,
                                                            const ModelCache& cache, int q) {
  const int p = ds.layout.p;
  if (q < 1 || q > p) fail(ErrorKind::config, "brute_force_optimal_subset: q outside 1..p");
  if (rows.empty()) fail(ErrorKind::config, "brute_force_optimal_subset: no evaluation rows");

  const std::uint32_t count = 1u << p;
  std::vector<double> utility(count, 0.0);
  for (int row : rows) {
    auto vals = coalition_values_all(ds.layout, ds.task, ds.X.row(row).transpose(), ds.y[row],
                                     cache);
    for (std::uint32_t mask = 0; mask < count; ++mask) utility[mask] += vals[mask];
  }

  std::uint32_t best_mask = 0;
  double best = utility[0];
  for (std::uint32_t mask = 1; mask < count; ++mask) {
    if (std::popcount(mask) > q) continue;
    if (utility[mask] > best) {  // strict: ties keep the smaller bitmask
      best = utility[mask];
      best_mask = mask;
    }
  }
  return {best_mask, best / static_cast<double>(rows.size())};
}

HypothesisResult conditional_hypothesis_test(const QuantileModel& median_model,
                                             const Eigen::MatrixXd& z_rows,
                                             const SubgroupSpec& subgroup, int modality) {
  const int m = static_cast<int>(z_rows.rows());
  if (m < 2) fail(ErrorKind::config, "hypothesis test: need at least 2 calibration rows");
  if (subgroup.indices.size() != subgroup.values.size())
    fail(ErrorKind::config, "hypothesis test: subgroup indices/values length mismatch");
  for (int idx : subgroup.indices)
    if (idx < 0 || idx >= z_rows.cols())
      fail(ErrorKind::config, "hypothesis test: subgroup index " + std::to_string(idx) +
                                  " outside the covariate width");

  Eigen::VectorXd evals(m);
  for (int i = 0; i < m; ++i) {
    Eigen::VectorXd z = z_rows.row(i).transpose();
    for (std::size_t t = 0; t < subgroup.indices.size(); ++t)
      z[subgroup.indices[t]] = subgroup.values[t];
    evals[i] = evaluate_quantile(median_model, z);
  }

  HypothesisResult result;
  result.modality = modality;
  result.subgroup = subgroup;
  result.df = m - 1;
  result.mean = evals.mean();
  result.sd = std::sqrt((evals.array() - result.mean).square().sum() / (m - 1));
  if (result.sd == 0.0) {
    result.degenerate = true;
    result.t_stat = 0.0;
    result.p_value = result.mean > 0.0 ? 0.0 : 1.0;
  } else {
    result.t_stat = result.mean / (result.sd / std::sqrt(static_cast<double>(m)));
    result.p_value = 1.0 - student_t_cdf(result.t_stat, result.df);
  }
  return result;
}

double rkhs_width_bound(const QuantileModel& model, const Eigen::VectorXd& x, double kappa) {
  const double j0 = model.zero_objective;
  return kappa * std::sqrt(j0 / model.lambda1) +
         model.fmap.apply(x).norm() * std::sqrt(j0 / model.lambda2);
}

json intervals_to_json(const std::vector<ModalityInterval>& intervals, double level_lo,
                       double level_hi) {
  json out;
  out["levels"] = {{"lo", level_lo}, {"hi", level_hi}};
  json arr = json::array();
  for (const auto& iv : intervals) {
    json rec;
    rec["modality"] = iv.modality;
    rec["lo"] = iv.lo;
    rec["hi"] = iv.hi;
    rec["crossing_repaired"] = iv.crossing_repaired;
    arr.push_back(rec);
  }
  out["intervals"] = arr;
  return out;
}

json selection_to_json(const SelectionResult& result) {
  json out;
  out["selected"] = result.selected;
  json scores = json::array();
  for (int i = 0; i < result.scores.size(); ++i) scores.push_back(result.scores[i]);
  out["scores"] = scores;
  out["threshold"] = result.threshold;
  return out;
}

json hypothesis_to_json(const HypothesisResult& result, int m) {
  json out;
  out["modality"] = result.modality;
  out["subgroup"] = {{"indices", result.subgroup.indices}, {"values", result.subgroup.values}};
  out["m"] = m;
  out["df"] = result.df;
  out["mean"] = result.mean;
  out["sd"] = result.sd;
  out["t_stat"] = result.t_stat;
  out["p_value"] = result.p_value;
  out["degenerate"] = result.degenerate;
  return out;
}

void save_path_csv(const PathReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ingestion, "cannot write " + path.string());
  if (report.classification)
    out << "q,cross_entropy,accuracy,mean_selected\n";
  else
    out << "q,mse,r2,mean_selected\n";
  for (const auto& p : report.points) {
    out << p.q << ',';
    if (report.classification)
      out << format_double(p.cross_entropy) << ',' << format_double(p.accuracy);
    else
      out << format_double(p.mse) << ',' << format_double(p.r2);
    out << ',' << format_double(p.mean_selected) << '\n';
  }
}

}  // namespace cshap
