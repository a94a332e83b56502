#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cshap {

enum class TaskKind { regression, classification };

struct Task {
  TaskKind kind = TaskKind::regression;
  int num_classes = 0;  // classification only

  static Task regression() { return {TaskKind::regression, 0}; }
  static Task classification(int classes) { return {TaskKind::classification, classes}; }

  bool is_classification() const { return kind == TaskKind::classification; }
  bool operator==(const Task&) const = default;
};

// Partition of the flattened feature vector into p modality blocks.
// Modality j occupies columns [offsets[j], offsets[j] + dims[j]).
struct ModalityLayout {
  int p = 0;
  std::vector<int> dims;
  std::vector<int> offsets;  // size p + 1, offsets[p] == total width

  static ModalityLayout make(std::vector<int> dims);
  int width() const { return offsets.empty() ? 0 : offsets.back(); }
};

struct MultimodalDataset {
  ModalityLayout layout;
  Eigen::MatrixXd X;  // n x layout.width()
  Eigen::VectorXd y;
  Task task;

  int n() const { return static_cast<int>(X.rows()); }
};

struct SplitIndices {
  std::vector<int> train;  // I1, sorted ascending
  std::vector<int> calib;  // I2, sorted ascending

  int m() const { return static_cast<int>(calib.size()); }
};

// Uniformly random equal partition of {0,...,n-1}; deterministic per seed.
// n must be even and >= 4 (drop a row first if it is odd).
SplitIndices split(int n, std::uint64_t seed);

// Column indices covered by the modalities in `mask`.
std::vector<int> subset_columns(const ModalityLayout& layout, std::uint32_t mask);

// Gathers the `mask` coordinates of a full-width feature vector.
Eigen::VectorXd restrict_features(const ModalityLayout& layout, std::uint32_t mask,
                                  const Eigen::VectorXd& x);

// CSV with a header row (feature columns then `y`), '.' decimal, UTF-8.
MultimodalDataset load_dataset(const std::filesystem::path& csv,
                               const ModalityLayout& layout, const Task& task);

// Loads layout/task from the JSON sidecar written by save_dataset.
MultimodalDataset load_dataset(const std::filesystem::path& csv,
                               const std::filesystem::path& sidecar);

// Writes the CSV plus a JSON sidecar {p, dims, task, classes?}. Values are
// emitted with shortest round-trip formatting, so save/load is bit-exact.
void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& csv,
                  const std::filesystem::path& sidecar);

// FNV-1a over the raw bytes of layout, X and y; used in cache manifests.
std::string dataset_fingerprint(const MultimodalDataset& ds);

}  // namespace cshap
