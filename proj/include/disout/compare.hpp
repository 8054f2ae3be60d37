#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "disout/config.hpp"
#include "disout/train.hpp"

namespace disout {

/// Fixed names inside a run directory.
inline constexpr const char* kSnapshotFile = "config.cfg";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kTimingFile = "timing.csv";
inline constexpr const char* kCheckpointDir = "checkpoints";
inline constexpr const char* kLastCheckpoint = "last.ckpt";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

/// Trains `cfg` into `dir`: writes the resolved snapshot, metrics.csv,
/// timing.csv and checkpoints/ (last.ckpt after every epoch, epoch_<k>.ckpt
/// every checkpoint_every epochs, final.ckpt at the end). With `resume`,
/// continues from checkpoints/last.ckpt and drops metrics rows of epochs
/// the checkpoint does not cover.
TrainResult run_to_directory(const RunConfig& cfg, const std::string& dir,
                             bool resume = false, std::ostream* log = nullptr);

struct CompareCell {
  Regularizer regularizer = Regularizer::kNone;
  std::uint64_t seed = 0;
  std::string dir;
  bool ok = false;
  std::string error;
  std::optional<double> test_acc;
  /// Highest test accuracy over all evaluated epochs.
  std::optional<double> best_test_acc;
  /// Clean accuracy on the training set after the final epoch.
  std::optional<double> train_acc;
  std::optional<double> gap;
};

struct CompareRow {
  Regularizer regularizer = Regularizer::kNone;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double test_mean = 0.0;
  double test_std = 0.0;
  double best_test_mean = 0.0;
  double best_test_std = 0.0;
  double gap_mean = 0.0;
  double gap_std = 0.0;
};

struct CompareReport {
  std::vector<CompareCell> cells;
  std::vector<CompareRow> rows;
  [[nodiscard]] bool all_ok() const;
};

/// Mean and sample standard deviation (n − 1); a single value has std 0.
std::pair<double, double> mean_and_std(const std::vector<double>& xs);

std::string cell_directory_name(Regularizer r, std::uint64_t seed);

/// Trains every (regularizer, seed) cell into `<out>/<reg>_seed<k>/`, then
/// summarizes from the written metrics files.
CompareReport run_compare(const RunConfig& cfg, const std::string& out_dir,
                          std::ostream* log = nullptr);

/// Reads each cell's metrics.csv and builds the per-regularizer rows. Cells
/// whose files are missing or lack final accuracies are marked failed.
CompareReport summarize_compare(const RunConfig& cfg, const std::string& out_dir);

/// summary.csv and the aligned summary.txt.
void write_summary(const CompareReport& report, const std::string& out_dir);
std::string format_summary_text(const CompareReport& report);

}  // namespace disout
