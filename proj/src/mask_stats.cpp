#include "disout/mask_stats.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "disout/distortion.hpp"
#include "disout/errors.hpp"
#include "disout/rng.hpp"

namespace disout {

bool MaskStats::element_within(double p, double sigmas) const {
  return std::abs(element_fraction - p) <= sigmas * element_sigma;
}

std::map<std::string, std::size_t> block_shape_histogram(const Tensor& mask) {
  if (mask.rank() != 4) {
    throw DimensionError("block_shape_histogram: expected N×C×H×W, got " +
                         to_string(mask.shape()));
  }
  const std::size_t maps = mask.dim(0) * mask.dim(1), h = mask.dim(2), w = mask.dim(3);
  auto v = mask.values();
  std::map<std::string, std::size_t> hist;
  std::vector<char> seen(h * w);
  std::vector<std::size_t> stack;
  for (std::size_t m = 0; m < maps; ++m) {
    const double* base = v.data() + m * h * w;
    std::fill(seen.begin(), seen.end(), 0);
    for (std::size_t start = 0; start < h * w; ++start) {
      if (base[start] == 0.0 || seen[start]) continue;
      std::size_t r0 = h, r1 = 0, c0 = w, c1 = 0;
      stack.assign(1, start);
      seen[start] = 1;
      while (!stack.empty()) {
        const std::size_t at = stack.back();
        stack.pop_back();
        const std::size_t r = at / w, c = at % w;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
        auto visit = [&](std::size_t q) {
          if (base[q] != 0.0 && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        };
        if (r > 0) visit(at - w);
        if (r + 1 < h) visit(at + w);
        if (c > 0) visit(at - 1);
        if (c + 1 < w) visit(at + 1);
      }
      ++hist[std::to_string(r1 - r0 + 1) + "x" + std::to_string(c1 - c0 + 1)];
    }
  }
  return hist;
}

MaskStats compute_mask_stats(const MaskStatsConfig& cfg) {
  if (!(cfg.p >= 0.0 && cfg.p < 1.0)) {
    throw ConfigError("mask-stats: p must lie in [0, 1)");
  }
  if (cfg.samples == 0) throw ConfigError("mask-stats: samples must be positive");
  if (cfg.block_size == 0 || cfg.block_size > cfg.map_size) {
    throw ConfigError("mask-stats: block_size must lie in [1, map_size]");
  }
  MaskStats s;
  Rng element_rng(cfg.seed, RngStream::kMask, 1);
  const Tensor em = sample_element_mask({cfg.samples}, cfg.p, element_rng);
  s.element_samples = cfg.samples;
  s.element_fraction = sum(em) / static_cast<double>(cfg.samples);
  s.element_sigma = std::sqrt(cfg.p * (1.0 - cfg.p) / static_cast<double>(cfg.samples));

  const std::size_t per_map = cfg.map_size * cfg.map_size;
  const std::size_t maps = (cfg.samples + per_map - 1) / per_map;
  Rng block_rng(cfg.seed, RngStream::kMask, 2);
  const Tensor bm = sample_block_mask({maps, 1, cfg.map_size, cfg.map_size}, cfg.p,
                                      cfg.block_size, block_rng);
  s.block_samples = bm.size();
  s.block_fraction = sum(bm) / static_cast<double>(bm.size());
  s.block_shapes = block_shape_histogram(bm);
  return s;
}

}  // namespace disout
