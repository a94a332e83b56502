#include "cshap/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cshap/error.hpp"
#include "cshap/rng.hpp"

namespace cshap {

using nlohmann::json;

ModalityLayout ModalityLayout::make(std::vector<int> dims) {
  if (dims.empty()) fail(ErrorKind::config, "layout: need at least one modality");
  ModalityLayout layout;
  layout.p = static_cast<int>(dims.size());
  layout.dims = std::move(dims);
  layout.offsets.resize(layout.p + 1, 0);
  for (int j = 0; j < layout.p; ++j) {
    if (layout.dims[j] < 1)
      fail(ErrorKind::config, "layout: modality " + std::to_string(j) + " has dimension < 1");
    layout.offsets[j + 1] = layout.offsets[j] + layout.dims[j];
  }
  return layout;
}

SplitIndices split(int n, std::uint64_t seed) {
  if (n < 4 || n % 2 != 0)
    fail(ErrorKind::config,
         "split: n must be even and >= 4 (got " + std::to_string(n) +
             "); drop one row before splitting an odd-sized dataset");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed, /*stream=*/0xC5917);
  // Fisher-Yates; std::shuffle is avoided because its draw sequence is
  // implementation-defined.
  for (int i = n - 1; i > 0; --i) {
    int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + n / 2);
  out.calib.assign(perm.begin() + n / 2, perm.end());
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.calib.begin(), out.calib.end());
  return out;
}

std::vector<int> subset_columns(const ModalityLayout& layout, std::uint32_t mask) {
  std::vector<int> cols;
  for (int j = 0; j < layout.p; ++j) {
    if (mask & (1u << j)) {
      for (int k = 0; k < layout.dims[j]; ++k) cols.push_back(layout.offsets[j] + k);
    }
  }
  return cols;
}

Eigen::VectorXd restrict_features(const ModalityLayout& layout, std::uint32_t mask,
                                  const Eigen::VectorXd& x) {
  if (x.size() != layout.width())
    fail(ErrorKind::config, "restrict_features: feature width mismatch");
  auto cols = subset_columns(layout, mask);
  Eigen::VectorXd out(cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[cols[i]];
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

double parse_cell(const std::string& cell, int line_no, int col) {
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t')) --end;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end)
    fail(ErrorKind::ingestion, "line " + std::to_string(line_no) + ", column " +
                                   std::to_string(col + 1) + ": non-numeric cell '" + cell + "'");
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

void validate_labels(const MultimodalDataset& ds) {
  if (!ds.task.is_classification()) return;
  for (int i = 0; i < ds.n(); ++i) {
    double v = ds.y[i];
    if (v != std::floor(v) || v < 0 || v >= ds.task.num_classes)
      fail(ErrorKind::ingestion, "row " + std::to_string(i) + ": label " + format_double(v) +
                                     " outside {0,...," +
                                     std::to_string(ds.task.num_classes - 1) + "}");
  }
}

}  // namespace

MultimodalDataset load_dataset(const std::filesystem::path& csv, const ModalityLayout& layout,
                               const Task& task) {
  std::ifstream in(csv);
  if (!in) fail(ErrorKind::ingestion, "cannot open " + csv.string());

  const int expected = layout.width() + 1;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::ingestion, csv.string() + ": empty file");
  {
    auto header = split_csv_line(line);
    if (static_cast<int>(header.size()) != expected)
      fail(ErrorKind::ingestion,
           "header has " + std::to_string(header.size()) + " columns, layout requires " +
               std::to_string(expected) + " (features + response)");
  }

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != expected)
      fail(ErrorKind::ingestion, "line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(expected) + " columns, found " +
                                     std::to_string(cells.size()));
    std::vector<double> row(expected);
    for (int c = 0; c < expected; ++c) row[c] = parse_cell(cells[c], line_no, c);
    rows.push_back(std::move(row));
  }

  MultimodalDataset ds;
  ds.layout = layout;
  ds.task = task;
  const int n = static_cast<int>(rows.size());
  ds.X.resize(n, layout.width());
  ds.y.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < layout.width(); ++c) ds.X(i, c) = rows[i][c];
    ds.y[i] = rows[i][layout.width()];
  }
  validate_labels(ds);
  return ds;
}

MultimodalDataset load_dataset(const std::filesystem::path& csv,
                               const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) fail(ErrorKind::ingestion, "cannot open sidecar " + sidecar.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::ingestion, sidecar.string() + ": " + e.what());
  }
  auto dims = j.at("dims").get<std::vector<int>>();
  auto layout = ModalityLayout::make(dims);
  if (j.at("p").get<int>() != layout.p)
    fail(ErrorKind::ingestion, sidecar.string() + ": p does not match dims length");
  Task task;
  std::string kind = j.at("task").get<std::string>();
  if (kind == "regression") {
    task = Task::regression();
  } else if (kind == "classification") {
    task = Task::classification(j.at("classes").get<int>());
  } else {
    fail(ErrorKind::ingestion, sidecar.string() + ": unknown task '" + kind + "'");
  }
  return load_dataset(csv, layout, task);
}

void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& csv,
                  const std::filesystem::path& sidecar) {
  std::ofstream out(csv);
  if (!out) fail(ErrorKind::ingestion, "cannot write " + csv.string());
  for (int j = 0; j < ds.layout.p; ++j) {
    for (int k = 0; k < ds.layout.dims[j]; ++k)
      out << 'm' << j << '_' << k << ',';
  }
  out << "y\n";
  for (int i = 0; i < ds.n(); ++i) {
    for (int c = 0; c < ds.layout.width(); ++c) out << format_double(ds.X(i, c)) << ',';
    out << format_double(ds.y[i]) << '\n';
  }
  if (!out) fail(ErrorKind::ingestion, "write failed for " + csv.string());

  json j;
  j["p"] = ds.layout.p;
  j["dims"] = ds.layout.dims;
  j["task"] = ds.task.is_classification() ? "classification" : "regression";
  if (ds.task.is_classification()) j["classes"] = ds.task.num_classes;
  std::ofstream side(sidecar);
  if (!side) fail(ErrorKind::ingestion, "cannot write " + sidecar.string());
  side << j.dump(2) << '\n';
}

std::string dataset_fingerprint(const MultimodalDataset& ds) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* data, std::size_t bytes) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (int d : ds.layout.dims) feed(&d, sizeof(d));
  int task_tag = ds.task.is_classification() ? 1 + ds.task.num_classes : 0;
  feed(&task_tag, sizeof(task_tag));
  feed(ds.X.data(), sizeof(double) * static_cast<std::size_t>(ds.X.size()));
  feed(ds.y.data(), sizeof(double) * static_cast<std::size_t>(ds.y.size()));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace cshap
