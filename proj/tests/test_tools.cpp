#include "disout/distortion.hpp"
#include "disout/gradcheck.hpp"
#include "disout/mask_stats.hpp"
#include "doctest.h"

using namespace disout;

TEST_CASE("relative error") {
  CHECK(relative_error({1, 2}, {1, 2}) == 0.0);
  CHECK(relative_error({0, 0}, {0, 0}) == 0.0);
  CHECK(relative_error({1, -2}, {1, 2}) == 2.0);
  CHECK(relative_error({1, 4}, {1, 3}) == 0.25);
}

TEST_CASE("gradient suites pass and the sign-flip fixture is caught") {
  GradcheckConfig cfg;
  cfg.instances = 10;
  for (const auto& s : run_gradcheck(cfg)) {
    CHECK_MESSAGE(s.passed, s.name);
    CHECK(s.instances == 10);
  }
  cfg.inject_sign_flip = true;
  for (const auto& s : run_gradcheck(cfg)) CHECK_FALSE(s.passed);
}

TEST_CASE("a fixed seed reproduces the same errors") {
  GradcheckConfig cfg;
  cfg.instances = 5;
  cfg.seed = 9;
  const auto a = gradcheck_conv(cfg), b = gradcheck_conv(cfg);
  CHECK(a.max_rel_error == b.max_rel_error);
  CHECK(a.worst_seed == b.worst_seed);
}

TEST_CASE("block shape histogram") {
  // Two separate regions: a 2x2 square and a 1x3 bar.
  const Tensor m({1, 1, 4, 5},
                 {1, 1, 0, 0, 0,
                  1, 1, 0, 0, 0,
                  0, 0, 0, 0, 0,
                  0, 0, 1, 1, 1},
                 Precision::F64);
  const auto h = block_shape_histogram(m);
  CHECK(h.size() == 2);
  CHECK(h.at("2x2") == 1);
  CHECK(h.at("1x3") == 1);
}

TEST_CASE("mask statistics") {
  MaskStatsConfig cfg;
  cfg.p = 0.5;
  cfg.samples = 1000000;
  const MaskStats s = compute_mask_stats(cfg);
  CHECK(s.element_within(0.5));
  CHECK(s.element_fraction >= 0.498);
  CHECK(s.element_fraction <= 0.502);

  cfg.p = 0.0;
  const MaskStats zero = compute_mask_stats(cfg);
  CHECK(zero.element_fraction == 0.0);
  CHECK(zero.block_fraction == 0.0);

  cfg.p = 0.2;
  cfg.block_size = 3;
  cfg.samples = 100000;
  const MaskStats blocks = compute_mask_stats(cfg);
  CHECK(blocks.block_shapes.count("3x3") == 1);
  for (const auto& [shape, count] : blocks.block_shapes) {
    const auto x = shape.find('x');
    CHECK(std::stoul(shape.substr(0, x)) >= 3);
    CHECK(std::stoul(shape.substr(x + 1)) >= 3);
  }
}
