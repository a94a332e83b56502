#include "cshap/run_config.hpp"

#include <algorithm>
#include <fstream>

#include "cshap/error.hpp"
#include "cshap/version.hpp"

namespace cshap {

using nlohmann::json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

LearnerSpec parse_learner(const json& j) {
  std::string kind = get_or<std::string>(j, "kind", "ols");
  if (kind == "ols") return LearnerSpec::ols();
  if (kind == "ridge") return LearnerSpec::ridge(get_or<double>(j, "lambda", 1.0));
  if (kind == "softmax")
    return LearnerSpec::softmax(get_or<double>(j, "lr", 0.1), get_or<int>(j, "epochs", 200),
                                get_or<double>(j, "l2", 0.0));
  fail(ErrorKind::config, "config: unknown learner kind '" + kind + "'");
}

json learner_to_json(const LearnerSpec& spec) {
  json j;
  switch (spec.kind) {
    case LearnerSpec::Kind::ols:
      j["kind"] = "ols";
      break;
    case LearnerSpec::Kind::ridge:
      j["kind"] = "ridge";
      j["lambda"] = spec.lambda;
      break;
    case LearnerSpec::Kind::softmax:
      j["kind"] = "softmax";
      j["lr"] = spec.lr;
      j["epochs"] = spec.epochs;
      j["l2"] = spec.l2;
      break;
  }
  return j;
}

KernelSpec parse_kernel(const json& j) {
  std::string kind = get_or<std::string>(j, "kind", "gaussian");
  if (kind == "linear") return KernelSpec::linear();
  if (kind == "gaussian") {
    double bw = get_or<double>(j, "bandwidth", 0.0);
    return bw > 0 ? KernelSpec::gaussian(bw) : KernelSpec::gaussian_median();
  }
  fail(ErrorKind::config, "config: unknown kernel kind '" + kind + "'");
}

json kernel_to_json(const KernelSpec& spec) {
  json j;
  j["kind"] = spec.kind == KernelSpec::Kind::linear ? "linear" : "gaussian";
  if (spec.kind == KernelSpec::Kind::gaussian) j["bandwidth"] = spec.bandwidth;
  return j;
}

LambdaPolicy parse_lambdas(const json& j) {
  std::string policy = get_or<std::string>(j, "policy", "fixed");
  if (policy == "fixed")
    return LambdaPolicy::fixed(get_or<double>(j, "lambda1", 0.01),
                               get_or<double>(j, "lambda2", 0.01));
  if (policy == "cv") {
    LambdaPolicy p = LambdaPolicy::cv_default();
    p.folds = get_or<int>(j, "folds", 5);
    if (j.contains("grid1") || j.contains("grid2")) {
      auto g1 = get_or<std::vector<double>>(j, "grid1", {1e-3, 1e-2, 1e-1, 1.0, 10.0});
      auto g2 = get_or<std::vector<double>>(j, "grid2", {1e-3, 1e-2, 1e-1, 1.0, 10.0});
      p.grid.clear();
      for (double l1 : g1)
        for (double l2 : g2) p.grid.emplace_back(l1, l2);
    }
    return p;
  }
  fail(ErrorKind::config, "config: unknown lambda policy '" + policy + "'");
}

json lambdas_to_json(const LambdaPolicy& p) {
  json j;
  if (p.kind == LambdaPolicy::Kind::fixed) {
    j["policy"] = "fixed";
    j["lambda1"] = p.lambda1;
    j["lambda2"] = p.lambda2;
  } else {
    j["policy"] = "cv";
    j["folds"] = p.folds;
    std::vector<double> g1, g2;
    for (const auto& cell : p.grid) {
      if (std::find(g1.begin(), g1.end(), cell.first) == g1.end()) g1.push_back(cell.first);
      if (std::find(g2.begin(), g2.end(), cell.second) == g2.end()) g2.push_back(cell.second);
    }
    j["grid1"] = g1;
    j["grid2"] = g2;
  }
  return j;
}

}  // namespace

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
  cfg.threads = get_or<int>(j, "threads", 0);
  cfg.out = get_or<std::string>(j, "out", "out");
  cfg.verbose = get_or<bool>(j, "verbose", false);

  if (j.contains("data")) {
    const json& d = j.at("data");
    std::string source = get_or<std::string>(d, "source", "synthetic");
    if (source == "synthetic") {
      cfg.data.source = DataBlock::Source::synthetic;
    } else if (source == "csv") {
      cfg.data.source = DataBlock::Source::csv;
    } else {
      fail(ErrorKind::config, "config: unknown data source '" + source + "'");
    }
    if (d.contains("synthetic")) {
      const json& s = d.at("synthetic");
      cfg.data.synthetic.p = get_or<int>(s, "p", 10);
      cfg.data.synthetic.d = get_or<int>(s, "d", 3);
      cfg.data.synthetic.n = get_or<int>(s, "n", 1000);
      cfg.data.synthetic.epsilon = get_or<double>(s, "epsilon", 0.0);
      cfg.data.synthetic.noise_sd = get_or<double>(s, "noise_sd", 1.0);
      cfg.data.synthetic_seed_explicit = s.contains("seed");
      if (cfg.data.synthetic_seed_explicit)
        cfg.data.synthetic.seed = s.at("seed").get<std::uint64_t>();
    }
    if (d.contains("csv")) {
      cfg.data.csv_data = d.at("csv").at("data").get<std::string>();
      cfg.data.csv_layout = d.at("csv").at("layout").get<std::string>();
    }
    cfg.data.test_fraction = get_or<double>(d, "test_fraction", 0.0);
    if (cfg.data.test_fraction < 0.0 || cfg.data.test_fraction >= 1.0)
      fail(ErrorKind::config, "config: test_fraction must lie in [0, 1)");
  }

  if (j.contains("conformal")) {
    const json& c = j.at("conformal");
    cfg.alpha = get_or<double>(c, "alpha", 0.1);
    cfg.q = get_or<int>(c, "q", 0);
    if (c.contains("learner")) cfg.learner = parse_learner(c.at("learner"));
    if (c.contains("kernel")) cfg.kernel = parse_kernel(c.at("kernel"));
    if (c.contains("d_omega")) {
      if (c.at("d_omega").is_array())
        cfg.d_omega = c.at("d_omega").get<std::vector<int>>();
      else
        cfg.d_omega_uniform = c.at("d_omega").get<int>();
    }
    if (c.contains("lambda")) cfg.lambdas = parse_lambdas(c.at("lambda"));
    std::string mode = get_or<std::string>(c, "test_mode", "omit");
    if (mode == "omit") {
      cfg.test_mode = TestPointMode::omit;
    } else if (mode == "impute") {
      cfg.test_mode = TestPointMode::impute;
    } else {
      fail(ErrorKind::config, "config: unknown test_mode '" + mode + "'");
    }
  }

  if (j.contains("test_points")) {
    const json& t = j.at("test_points");
    std::string source = get_or<std::string>(t, "source", "tail");
    if (source == "tail") {
      cfg.test_points.source = TestPointsBlock::Source::tail;
    } else if (source == "csv") {
      cfg.test_points.source = TestPointsBlock::Source::csv;
      cfg.test_points.file = t.at("file").get<std::string>();
    } else {
      fail(ErrorKind::config, "config: unknown test_points source '" + source + "'");
    }
    cfg.test_points.count = get_or<int>(t, "count", 0);
  }

  if (j.contains("path")) cfg.q_values = get_or<std::vector<int>>(j.at("path"), "q_values", {});

  if (j.contains("hypothesis")) {
    const json& h = j.at("hypothesis");
    cfg.hypothesis.modalities = get_or<std::vector<int>>(h, "modalities", {});
    if (h.contains("covariates")) {
      const json& cov = h.at("covariates");
      std::string source = get_or<std::string>(cov, "source", "omega");
      if (source == "omega") {
        cfg.hypothesis.covariates_omega = true;
      } else if (source == "columns") {
        cfg.hypothesis.covariates_omega = false;
        cfg.hypothesis.covariate_columns = cov.at("names").get<std::vector<std::string>>();
      } else {
        fail(ErrorKind::config, "config: unknown covariates source '" + source + "'");
      }
    }
    for (const json& s : get_or<json>(h, "subgroups", json::array())) {
      SubgroupSpec spec;
      spec.indices = get_or<std::vector<int>>(s, "indices", {});
      spec.values = get_or<std::vector<double>>(s, "values", {});
      if (spec.indices.size() != spec.values.size())
        fail(ErrorKind::config, "config: subgroup indices/values length mismatch");
      cfg.hypothesis.subgroups.push_back(std::move(spec));
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorKind::usage, "cannot open config file " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::config, file.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["threads"] = cfg.threads;
  j["out"] = cfg.out;
  j["verbose"] = cfg.verbose;

  json d;
  d["source"] = cfg.data.source == DataBlock::Source::synthetic ? "synthetic" : "csv";
  d["synthetic"] = {{"p", cfg.data.synthetic.p},       {"d", cfg.data.synthetic.d},
                    {"n", cfg.data.synthetic.n},       {"epsilon", cfg.data.synthetic.epsilon},
                    {"noise_sd", cfg.data.synthetic.noise_sd}};
  if (cfg.data.synthetic_seed_explicit) d["synthetic"]["seed"] = cfg.data.synthetic.seed;
  if (!cfg.data.csv_data.empty())
    d["csv"] = {{"data", cfg.data.csv_data}, {"layout", cfg.data.csv_layout}};
  d["test_fraction"] = cfg.data.test_fraction;
  j["data"] = d;

  json c;
  c["alpha"] = cfg.alpha;
  c["q"] = cfg.q;
  c["learner"] = learner_to_json(cfg.learner);
  c["kernel"] = kernel_to_json(cfg.kernel);
  if (!cfg.d_omega.empty())
    c["d_omega"] = cfg.d_omega;
  else
    c["d_omega"] = cfg.d_omega_uniform;
  c["lambda"] = lambdas_to_json(cfg.lambdas);
  c["test_mode"] = cfg.test_mode == TestPointMode::omit ? "omit" : "impute";
  j["conformal"] = c;

  json t;
  t["source"] = cfg.test_points.source == TestPointsBlock::Source::tail ? "tail" : "csv";
  if (!cfg.test_points.file.empty()) t["file"] = cfg.test_points.file;
  t["count"] = cfg.test_points.count;
  j["test_points"] = t;

  j["path"] = {{"q_values", cfg.q_values}};

  json h;
  h["modalities"] = cfg.hypothesis.modalities;
  if (cfg.hypothesis.covariates_omega) {
    h["covariates"] = {{"source", "omega"}};
  } else {
    h["covariates"] = {{"source", "columns"}, {"names", cfg.hypothesis.covariate_columns}};
  }
  json subgroups = json::array();
  for (const auto& s : cfg.hypothesis.subgroups)
    subgroups.push_back({{"indices", s.indices}, {"values", s.values}});
  h["subgroups"] = subgroups;
  j["hypothesis"] = h;
  return j;
}

ConformalConfig RunConfig::conformal_config(const ModalityLayout& layout) const {
  ConformalConfig cc;
  cc.alpha = alpha;
  cc.q = q;
  cc.learner = learner;
  cc.kernel = kernel;
  if (!d_omega.empty()) {
    cc.d_omega = d_omega;
  } else if (d_omega_uniform > 0) {
    cc.d_omega.resize(layout.p);
    for (int j = 0; j < layout.p; ++j) cc.d_omega[j] = std::min(d_omega_uniform, layout.dims[j]);
  }
  cc.lambdas = lambdas;
  cc.test_mode = test_mode;
  cc.seed = seed;
  cc.threads = threads;
  return cc;
}

std::string config_hash(const RunConfig& config) {
  std::string dump = run_config_to_json(config).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

json make_manifest(const std::string& command, const RunConfig& config) {
  json m;
  m["command"] = command;
  m["config_hash"] = config_hash(config);
  m["version"] = kVersion;
  return m;
}

}  // namespace cshap
