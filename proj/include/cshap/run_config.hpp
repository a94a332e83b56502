#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cshap/conformal.hpp"
#include "cshap/synthetic.hpp"

namespace cshap {

// One structured config file describes a whole run; flags may override the
// top-level keys (out, seed, threads). Parsing normalizes every field, so a
// config round-trips losslessly through run_config_to_json.
struct DataBlock {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  SyntheticConfig synthetic;
  bool synthetic_seed_explicit = false;  // absent seed inherits the run seed
  std::string csv_data;
  std::string csv_layout;
  double test_fraction = 0.0;  // tail fraction reserved as labeled test rows
};

struct TestPointsBlock {
  enum class Source { tail, csv };
  Source source = Source::tail;
  int count = 0;  // 0 = all available
  std::string file;
};

struct HypothesisBlock {
  std::vector<int> modalities;           // empty = all
  bool covariates_omega = true;          // z = Omega(x); otherwise named columns
  std::vector<std::string> covariate_columns;
  std::vector<SubgroupSpec> subgroups;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out = "out";
  bool verbose = false;
  DataBlock data;
  double alpha = 0.1;
  int q = 0;  // 0 = p
  LearnerSpec learner;
  KernelSpec kernel = KernelSpec::gaussian_median();
  int d_omega_uniform = 0;     // 0 = full dims; used when d_omega vector empty
  std::vector<int> d_omega;
  LambdaPolicy lambdas;
  TestPointMode test_mode = TestPointMode::omit;
  TestPointsBlock test_points;
  std::vector<int> q_values;
  HypothesisBlock hypothesis;

  // Materializes the ConformalConfig for a dataset with the given layout.
  ConformalConfig conformal_config(const ModalityLayout& layout) const;

  SyntheticConfig effective_synthetic() const {
    SyntheticConfig s = data.synthetic;
    if (!data.synthetic_seed_explicit) s.seed = seed;
    return s;
  }
};

RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& file);
nlohmann::json run_config_to_json(const RunConfig& config);

// FNV-1a over the canonical JSON dump.
std::string config_hash(const RunConfig& config);

nlohmann::json make_manifest(const std::string& command, const RunConfig& config);

}  // namespace cshap
