#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "cshap/conformal.hpp"
#include "cshap/dataset.hpp"
#include "cshap/error.hpp"
#include "cshap/run_config.hpp"
#include "cshap/synthetic.hpp"
#include "cshap/version.hpp"

namespace fs = std::filesystem;
using cshap::Error;
using cshap::ErrorKind;
using nlohmann::json;

namespace {

struct ResolvedData {
  cshap::MultimodalDataset main;  // rows fed to the split/train/calibrate pipeline
  cshap::MultimodalDataset test;  // labeled tail rows (empty when test_fraction == 0)
  std::optional<cshap::SyntheticTruth> truth;
};

cshap::MultimodalDataset take_rows(const cshap::MultimodalDataset& ds, int begin, int count) {
  cshap::MultimodalDataset out;
  out.layout = ds.layout;
  out.task = ds.task;
  out.X = ds.X.middleRows(begin, count);
  out.y = ds.y.segment(begin, count);
  return out;
}

ResolvedData resolve_data(const cshap::RunConfig& cfg) {
  ResolvedData out;
  cshap::MultimodalDataset full;
  if (cfg.data.source == cshap::DataBlock::Source::synthetic) {
    auto [ds, truth] = cshap::generate_synthetic_regression(cfg.effective_synthetic());
    full = std::move(ds);
    out.truth = std::move(truth);
  } else {
    if (cfg.data.csv_data.empty())
      cshap::fail(ErrorKind::config, "config: data.csv.data is required for csv source");
    full = cshap::load_dataset(cfg.data.csv_data, cfg.data.csv_layout);
  }
  int n_test = static_cast<int>(std::llround(cfg.data.test_fraction * full.n()));
  if (n_test >= full.n()) cshap::fail(ErrorKind::config, "config: test_fraction leaves no data");
  out.main = take_rows(full, 0, full.n() - n_test);
  if (n_test > 0) out.test = take_rows(full, full.n() - n_test, n_test);
  return out;
}

// Features-only CSV (header row, `width` columns).
Eigen::MatrixXd load_feature_rows(const fs::path& file, int width) {
  std::ifstream in(file);
  if (!in) cshap::fail(ErrorKind::ingestion, "cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) cshap::fail(ErrorKind::ingestion, file.string() + ": empty file");
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
      if (!cell.empty() && cell.back() == '\r') cell.pop_back();
      double value = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc{} || ptr != cell.data() + cell.size())
        cshap::fail(ErrorKind::ingestion,
                    file.string() + ": line " + std::to_string(line_no) + ": non-numeric cell");
      row.push_back(value);
    }
    if (static_cast<int>(row.size()) != width)
      cshap::fail(ErrorKind::ingestion, file.string() + ": line " + std::to_string(line_no) +
                                            ": expected " + std::to_string(width) + " columns");
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd x(rows.size(), width);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < width; ++c) x(static_cast<Eigen::Index>(i), c) = rows[i][c];
  return x;
}

Eigen::MatrixXd resolve_test_features(const cshap::RunConfig& cfg, const ResolvedData& data) {
  Eigen::MatrixXd features;
  if (cfg.test_points.source == cshap::TestPointsBlock::Source::csv) {
    features = load_feature_rows(cfg.test_points.file, data.main.layout.width());
  } else {
    if (data.test.n() == 0)
      cshap::fail(ErrorKind::config,
                  "config: test_points.source = tail needs data.test_fraction > 0");
    features = data.test.X;
  }
  if (cfg.test_points.count > 0 && cfg.test_points.count < features.rows())
    features = features.topRows(cfg.test_points.count).eval();
  return features;
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) cshap::fail(ErrorKind::ingestion, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const cshap::RunConfig& cfg) {
  write_json(dir / "manifest.json", cshap::make_manifest(command, cfg));
}

int cmd_synth(const cshap::RunConfig& cfg) {
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  auto [ds, truth] = cshap::generate_synthetic_regression(cfg.effective_synthetic());
  cshap::save_dataset(ds, out_dir / "data.csv", out_dir / "layout.json");

  json t;
  t["alpha"] = truth.alpha;
  json beta = json::array();
  for (int i = 0; i < truth.beta.size(); ++i) beta.push_back(truth.beta[i]);
  t["beta"] = beta;
  t["jitter"] = truth.jitter;
  json sigma = json::array();
  for (int r = 0; r < truth.sigma.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < truth.sigma.cols(); ++c) row.push_back(truth.sigma(r, c));
    sigma.push_back(row);
  }
  t["sigma"] = sigma;
  write_json(out_dir / "truth.json", t);
  write_manifest(out_dir, "synth", cfg);
  std::cout << "wrote " << (out_dir / "data.csv").string() << " (" << ds.n() << " rows, width "
            << ds.layout.width() << ")\n";
  return 0;
}

int cmd_shapley(const cshap::RunConfig& cfg) {
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  ResolvedData data = resolve_data(cfg);
  cshap::ConformalPipeline pipeline(data.main, cfg.conformal_config(data.main.layout));
  cshap::save_shapley_csv(pipeline.table(), out_dir / "shapley.csv");
  json summary = cshap::shapley_summary(pipeline.table());
  summary["manifest"] = cshap::make_manifest("shapley", cfg);
  write_json(out_dir / "shapley_summary.json", summary);
  write_manifest(out_dir, "shapley", cfg);
  std::cout << "wrote " << (out_dir / "shapley.csv").string() << " ("
            << pipeline.table().values.rows() << " x " << pipeline.table().values.cols()
            << ")\n";
  return 0;
}

void dump_traces(cshap::ConformalPipeline& pipeline, const fs::path& out_dir) {
  auto [tau_lo, tau_hi] = pipeline.levels();
  for (int j = 0; j < pipeline.p(); ++j) {
    for (double tau : {tau_lo, tau_hi}) {
      const auto& model = pipeline.quantile_model(j, tau);
      if (model.trace.empty()) continue;
      char name[64];
      std::snprintf(name, sizeof(name), "trace_mod%d_tau%.6f.csv", j, tau);
      std::ofstream out(out_dir / name);
      out << "iteration,objective\n";
      for (const auto& [it, obj] : model.trace) out << it << ',' << obj << '\n';
    }
  }
}

int cmd_intervals(const cshap::RunConfig& cfg) {
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  ResolvedData data = resolve_data(cfg);
  auto cc = cfg.conformal_config(data.main.layout);
  cc.solver.collect_trace = cfg.verbose;
  cshap::ConformalPipeline pipeline(data.main, cc);
  Eigen::MatrixXd points = resolve_test_features(cfg, data);

  auto [tau_lo, tau_hi] = pipeline.levels();
  json records = json::array();
  for (int i = 0; i < points.rows(); ++i) {
    auto intervals = pipeline.intervals_at(points.row(i).transpose());
    for (const auto& iv : intervals) {
      json rec;
      rec["point"] = i;
      rec["modality"] = iv.modality;
      rec["lo"] = iv.lo;
      rec["hi"] = iv.hi;
      rec["crossing_repaired"] = iv.crossing_repaired;
      records.push_back(rec);
    }
  }
  json out;
  out["manifest"] = cshap::make_manifest("intervals", cfg);
  out["levels"] = {{"lo", tau_lo}, {"hi", tau_hi}};
  out["alpha"] = cfg.alpha;
  out["q"] = pipeline.effective_q();
  out["records"] = records;
  write_json(out_dir / "intervals.json", out);
  write_manifest(out_dir, "intervals", cfg);
  if (cfg.verbose && cc.test_mode == cshap::TestPointMode::omit) dump_traces(pipeline, out_dir);
  std::cout << "wrote " << (out_dir / "intervals.json").string() << " (" << points.rows()
            << " points x " << pipeline.p() << " modalities)\n";
  return 0;
}

int cmd_select(const cshap::RunConfig& cfg) {
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  ResolvedData data = resolve_data(cfg);
  cshap::ConformalPipeline pipeline(data.main, cfg.conformal_config(data.main.layout));
  Eigen::MatrixXd points = resolve_test_features(cfg, data);

  json records = json::array();
  for (int i = 0; i < points.rows(); ++i) {
    auto sel = pipeline.select_at(points.row(i).transpose());
    json rec = cshap::selection_to_json(sel);
    rec["point"] = i;
    records.push_back(rec);
  }
  json out;
  out["manifest"] = cshap::make_manifest("select", cfg);
  out["q"] = pipeline.effective_q();
  out["records"] = records;
  write_json(out_dir / "selection.json", out);
  write_manifest(out_dir, "select", cfg);
  std::cout << "wrote " << (out_dir / "selection.json").string() << '\n';
  return 0;
}

int cmd_path(const cshap::RunConfig& cfg) {
  if (cfg.q_values.empty())
    cshap::fail(ErrorKind::usage, "path: config must provide path.q_values");
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  ResolvedData data = resolve_data(cfg);
  if (data.test.n() == 0)
    cshap::fail(ErrorKind::config, "path: needs labeled test rows (data.test_fraction > 0)");

  auto report = cshap::selection_path(data.main, data.test, cfg.conformal_config(data.main.layout),
                                      cfg.q_values);
  cshap::save_path_csv(report, out_dir / "path.csv");
  json manifest = cshap::make_manifest("path", cfg);
  manifest["n_test"] = data.test.n();
  manifest["q_values"] = cfg.q_values;
  write_json(out_dir / "path_manifest.json", manifest);
  write_manifest(out_dir, "path", cfg);
  std::cout << "wrote " << (out_dir / "path.csv").string() << " (" << report.points.size()
            << " rows)\n";
  return 0;
}

int cmd_test(const cshap::RunConfig& cfg) {
  fs::path out_dir(cfg.out);
  fs::create_directories(out_dir);
  ResolvedData data = resolve_data(cfg);
  cshap::ConformalPipeline pipeline(data.main, cfg.conformal_config(data.main.layout));

  // Covariates: Omega(x) features by default, or named dataset columns.
  Eigen::MatrixXd z;
  if (cfg.hypothesis.covariates_omega) {
    z = pipeline.feature_map().apply_rows(pipeline.calibration_features());
  } else {
    const auto& layout = data.main.layout;
    std::vector<int> cols;
    for (const std::string& name : cfg.hypothesis.covariate_columns) {
      int found = -1;
      for (int j = 0; j < layout.p && found < 0; ++j)
        for (int k = 0; k < layout.dims[j] && found < 0; ++k)
          if (name == "m" + std::to_string(j) + "_" + std::to_string(k))
            found = layout.offsets[j] + k;
      if (found < 0)
        cshap::fail(ErrorKind::config, "hypothesis: unknown covariate column '" + name + "'");
      cols.push_back(found);
    }
    z.resize(pipeline.calibration_features().rows(), cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c)
      z.col(static_cast<Eigen::Index>(c)) = pipeline.calibration_features().col(cols[c]);
  }

  std::vector<int> modalities = cfg.hypothesis.modalities;
  if (modalities.empty())
    for (int j = 0; j < pipeline.p(); ++j) modalities.push_back(j);
  std::vector<cshap::SubgroupSpec> subgroups = cfg.hypothesis.subgroups;
  if (subgroups.empty()) subgroups.push_back({});  // no coordinates pinned

  json records = json::array();
  for (int j : modalities) {
    cshap::QuantileModel median = pipeline.fit_median_on_covariates(z, j);
    for (const auto& subgroup : subgroups) {
      auto result = cshap::conditional_hypothesis_test(median, z, subgroup, j);
      records.push_back(cshap::hypothesis_to_json(result, static_cast<int>(z.rows())));
    }
  }
  json out;
  out["manifest"] = cshap::make_manifest("test", cfg);
  out["records"] = records;
  write_json(out_dir / "hypothesis.json", out);
  write_manifest(out_dir, "test", cfg);
  std::cout << "wrote " << (out_dir / "hypothesis.json").string() << " (" << records.size()
            << " records)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal Shapley intervals for multimodal learning"};
  app.set_version_flag("--version", cshap::kVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  std::string out_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> threads_override;
  bool verbose = false;

  app.add_option("--config", config_file, "Run configuration file (JSON)")->required();
  app.add_option("--out", out_override, "Output directory (overrides config)");
  app.add_option("--seed", seed_override, "Seed override");
  app.add_option("--threads", threads_override, "Worker thread cap (0 = hardware)");
  app.add_flag("--verbose", verbose, "Emit solver diagnostics");

  const char* names[] = {"synth", "shapley", "intervals", "select", "path", "test"};
  const char* descriptions[] = {
      "Generate the synthetic regression benchmark",
      "Dump the calibration Shapley table",
      "Conformal Shapley intervals at test points",
      "Uncertainty-aware modality selection at test points",
      "Selection-path metrics over a q sweep",
      "Subgroup hypothesis tests on median Shapley scores",
  };
  for (int i = 0; i < 6; ++i) app.add_subcommand(names[i], descriptions[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    cshap::RunConfig cfg = cshap::load_run_config(config_file);
    if (!out_override.empty()) cfg.out = out_override;
    if (seed_override) cfg.seed = *seed_override;
    if (threads_override) cfg.threads = *threads_override;
    if (verbose) cfg.verbose = true;

    for (int i = 0; i < 6; ++i) {
      if (app.get_subcommand(names[i])->parsed()) {
        switch (i) {
          case 0: return cmd_synth(cfg);
          case 1: return cmd_shapley(cfg);
          case 2: return cmd_intervals(cfg);
          case 3: return cmd_select(cfg);
          case 4: return cmd_path(cfg);
          case 5: return cmd_test(cfg);
        }
      }
    }
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return (e.kind() == ErrorKind::config || e.kind() == ErrorKind::usage) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
