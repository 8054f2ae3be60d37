#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disout/train.hpp"

namespace disout {

/// A training config plus the grid used by `compare`.
struct RunConfig {
  TrainConfig train;
  std::vector<Regularizer> compare_regularizers{Regularizer::kNone,
                                                Regularizer::kDisoutElement};
  std::vector<std::uint64_t> compare_seeds{1, 2, 3, 4, 5};
};

/// Parses the flat `key = value` format. Blank lines and lines starting with
/// '#' are ignored; relative data paths are resolved against `base_dir`.
/// Errors are ConfigError naming the source, line and key.
RunConfig parse_config(const std::string& text, const std::string& source,
                       const std::string& base_dir);

/// Reads and parses a config file (IoError when unreadable).
RunConfig load_config(const std::string& path);

/// Applies one `dotted.key=value` override.
void apply_override(RunConfig& cfg, const std::string& assignment);

/// Sets a single key; `where` is used in error messages.
void set_config_value(RunConfig& cfg, const std::string& key,
                      const std::string& value, const std::string& where,
                      const std::string& base_dir = "");

/// Every key with its resolved value, in a fixed order. Parsing the snapshot
/// yields an identical config.
std::string config_snapshot(const RunConfig& cfg);

/// All accepted keys, in snapshot order.
std::vector<std::string> config_keys();

}  // namespace disout
