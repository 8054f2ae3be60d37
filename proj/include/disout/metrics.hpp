#pragma once

#include <cstddef>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "disout/train.hpp"

namespace disout {

/// metrics.csv columns: epoch, iter, train_loss, train_acc, val_acc,
/// test_acc, train_eval_acc, p_effective, then per attachment k
/// erc<k>_before, erc<k>_after, erc<k>_sup, erc<k>_penalty. Accuracies
/// that were not evaluated on a row are left empty. Doubles use %.17g.
std::string metrics_header(std::size_t attachments);
std::string metrics_row(const MetricsRecord& rec, std::size_t attachments);

/// Appends rows to metrics.csv and wall-clock rows to timing.csv. Writes
/// the header when the file is new or empty.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& metrics_path, const std::string& timing_path,
                std::size_t attachments, bool append);
  void write(const MetricsRecord& rec);
  void flush();

 private:
  std::ofstream metrics_;
  std::ofstream timing_;
  std::size_t attachments_;
};

struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header; FormatError when absent.
  [[nodiscard]] std::size_t column(const std::string& name) const;
  /// The value of `name` in the last row where it is non-empty.
  [[nodiscard]] std::optional<double> last_value(const std::string& name) const;
};

MetricsTable read_metrics_csv(const std::string& path);

}  // namespace disout
