#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>

#include "disout/tensor.hpp"

namespace disout {

struct MaskStatsConfig {
  double p = 0.5;
  std::size_t block_size = 1;
  /// Mask positions drawn for each kind.
  std::size_t samples = 1000000;
  /// Spatial extent of the maps used for block masks.
  std::size_t map_size = 32;
  std::uint64_t seed = 1;
};

struct MaskStats {
  double element_fraction = 0.0;
  /// Binomial standard deviation of the element fraction, sqrt(p(1−p)/n).
  double element_sigma = 0.0;
  std::size_t element_samples = 0;
  double block_fraction = 0.0;
  std::size_t block_samples = 0;
  /// Bounding boxes of 4-connected distorted regions, keyed "h x w".
  std::map<std::string, std::size_t> block_shapes;

  /// |element_fraction − p| ≤ 4σ.
  [[nodiscard]] bool element_within(double p, double sigmas = 4.0) const;
};

/// Histogram of the bounding-box shapes of the connected regions of a
/// binary N×C×H×W mask, per channel map.
std::map<std::string, std::size_t> block_shape_histogram(const Tensor& mask);

MaskStats compute_mask_stats(const MaskStatsConfig& cfg);

}  // namespace disout
