#include <cmath>
#include <functional>

#include "disout/distortion.hpp"
#include "disout/errors.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace disout;

namespace {

constexpr Precision kF64 = Precision::F64;

struct FcCase {
  Tensor k, f, m, eps;
  std::vector<int> sigma;
};

FcCase fc_case(Rng& rng, std::size_t n = 4, std::size_t d_in = 6, std::size_t d_out = 5) {
  FcCase c;
  c.k = oracle::random_normal({d_out, d_in}, rng);
  c.f = oracle::random_relu({n, d_in}, rng);
  c.m = oracle::random_mask({n, d_in}, 0.5, rng);
  c.eps = oracle::random_normal({n, d_in}, rng);
  c.sigma = sample_rademacher(n, rng);
  return c;
}

double central(const std::function<double(const Tensor&)>& f, Tensor x, std::size_t j,
               double h = 1e-6) {
  const double orig = x[j];
  x[j] = orig + h;
  const double up = f(x);
  x[j] = orig - h;
  const double down = f(x);
  return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("ramp is linear then flat") {
  DistortionConfig cfg;
  cfg.p_target = 0.2;
  cfg.ramp_fraction = 0.5;
  CHECK(ramp_p(0, 100, cfg) == 0.0);
  CHECK(ramp_p(25, 100, cfg) == doctest::Approx(0.1));
  CHECK(ramp_p(50, 100, cfg) == 0.2);
  CHECK(ramp_p(99, 100, cfg) == 0.2);
  cfg.ramp_fraction = 0.0;
  CHECK(ramp_p(0, 100, cfg) == 0.2);
}

TEST_CASE("config validation") {
  DistortionConfig cfg;
  cfg.p_target = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.mask_kind = MaskKind::kBlock;
  cfg.block_size = 9;
  CHECK_THROWS_AS(cfg.validate_for({2, 3, 8, 8}), ConfigError);
  cfg.block_size = 8;
  CHECK_NOTHROW(cfg.validate_for({2, 3, 8, 8}));
  CHECK_THROWS_AS(parse_grad_mode("fast"), ConfigError);
  CHECK(parse_mask_kind("block") == MaskKind::kBlock);
}

TEST_CASE("element mask rate and p = 0") {
  Rng rng(1);
  const Tensor m = sample_element_mask({200000}, 0.3, rng);
  const double frac = sum(m) / 200000.0;
  CHECK(std::abs(frac - 0.3) < 4 * std::sqrt(0.3 * 0.7 / 200000.0));
  CHECK(sum(sample_element_mask({1000}, 0.0, rng)) == 0.0);
}

TEST_CASE("block seed rate") {
  CHECK(block_seed_rate(0.1, 10, 10, 1) == doctest::Approx(0.1));
  CHECK(block_seed_rate(0.1, 10, 10, 3) == doctest::Approx(0.1 * 100 / (9.0 * 64)));
  // A block covering the whole map is anchored at rate p.
  CHECK(block_seed_rate(0.9, 4, 4, 4) == doctest::Approx(0.9));
}

TEST_CASE("sparse block masks are squares inside the map") {
  Rng rng(2);
  const Tensor m = sample_block_mask({4, 2, 16, 16}, 0.02, 4, rng);
  // Each connected region is a union of 4x4 squares, so every row and column
  // run of ones is at least 4 long.
  for (std::size_t plane = 0; plane < 8; ++plane) {
    for (std::size_t i = 0; i < 16; ++i) {
      std::size_t run = 0;
      for (std::size_t j = 0; j <= 16; ++j) {
        const bool on = j < 16 && m[plane * 256 + i * 16 + j] == 1.0;
        if (on) {
          ++run;
        } else {
          if (run) CHECK(run >= 4);
          run = 0;
        }
      }
    }
  }
  CHECK(sum(m) > 0.0);
}

TEST_CASE("distortion with epsilon = f reproduces dropout") {
  Rng rng(3);
  const Tensor f = oracle::random_relu({3, 7}, rng);
  const Tensor m = oracle::random_mask({3, 7}, 0.4, rng);
  CHECK(init_distortion(f) == f);
  CHECK(apply_distortion(f, m, init_distortion(f), 0.4) == apply_dropout(f, m, 0.4));
  const Tensor fh = distorted_features(f, m, f);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(fh[i] == (m[i] == 1.0 ? 0.0 : f[i]));
  }
}

TEST_CASE("dense surrogate matches the brute-force oracle") {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    FcCase c = fc_case(rng);
    const Tensor fh = distorted_features(c.f, c.m, c.eps);
    const ErcTerms terms = erc_surrogate_fc(c.k, fh, c.sigma, c.eps, 0.3);
    CHECK(terms.value() ==
          doctest::Approx(oracle::surrogate_fc(c.k, fh, c.sigma, c.eps, 0.3)).epsilon(1e-12));
  }
}

TEST_CASE("exact dense gradient matches finite differences") {
  Rng rng(5);
  FcCase c = fc_case(rng);
  const double lambda = 0.2;
  auto t_of = [&](const Tensor& e) {
    return oracle::surrogate_fc(c.k, distorted_features(c.f, c.m, e), c.sigma, e, lambda);
  };
  const Tensor g = exact_grad_fc(c.k, distorted_features(c.f, c.m, c.eps), c.sigma, c.m,
                                 c.eps, lambda);
  for (std::size_t j = 0; j < c.eps.size(); ++j) {
    CHECK(g[j] == doctest::Approx(central(t_of, c.eps, j)).epsilon(1e-6));
  }
}

TEST_CASE("exact conv gradient matches finite differences") {
  Rng rng(6);
  const Tensor k = oracle::random_normal({3, 2, 3, 3}, rng);
  const Tensor f = oracle::random_relu({2, 2, 5, 5}, rng);
  const Tensor m = oracle::random_mask(f.shape(), 0.5, rng);
  const Tensor eps = oracle::random_normal(f.shape(), rng);
  const auto sigma = sample_rademacher(2, rng);
  const double lambda = 0.1;
  const ConvGeometry g{2, 1};
  auto t_of = [&](const Tensor& e) {
    return oracle::surrogate_conv(k, distorted_features(f, m, e), sigma, e, lambda, 2, 1);
  };
  CHECK(erc_surrogate_conv(k, distorted_features(f, m, eps), sigma, eps, lambda, g).value() ==
        doctest::Approx(t_of(eps)).epsilon(1e-12));
  const Tensor grad =
      exact_grad_conv(k, distorted_features(f, m, eps), sigma, m, eps, lambda, g);
  for (std::size_t j = 0; j < eps.size(); ++j) {
    CHECK(grad[j] == doctest::Approx(central(t_of, eps, j)).epsilon(1e-6));
  }
}

TEST_CASE("approximate gradients keep the exact penalty term") {
  Rng rng(7);
  FcCase c = fc_case(rng);
  const double lambda = 0.1;
  const Tensor zeros_u({c.eps.size() / c.eps.dim(0)}, kF64);
  const Tensor approx = approx_grad_fc_batch(c.k, c.sigma, zeros_u, c.m, c.eps, lambda);
  // With u = 0 only the penalty survives; an all-zero mask does the same for
  // the exact gradient.
  const Tensor none = Tensor(c.m.shape(), kF64);
  const Tensor exact = exact_grad_fc(c.k, c.f, c.sigma, none, c.eps, lambda);
  CHECK(approx == exact);
  for (std::size_t j = 0; j < approx.size(); ++j) {
    CHECK(approx[j] == lambda / 4.0 * c.eps[j]);
  }
}

TEST_CASE("approximate dense gradient for one sample") {
  const Tensor km = Tensor::vector({1, 2, 3});
  const Tensor u = Tensor::vector({0.5, -1, 2});
  const Tensor m = Tensor::vector({1, 0, 1});
  const Tensor e = Tensor::vector({1, 1, 1});
  const Tensor g = approx_grad_fc(km, -1, u, m, e, 0.2, 2);
  CHECK(g[0] == doctest::Approx(0.5 * 0.5 * 1 + 0.1));
  CHECK(g[1] == doctest::Approx(0.1));
  CHECK(g[2] == doctest::Approx(0.5 * 2 * 3 + 0.1));
}

TEST_CASE("kernel channel maxima") {
  const Tensor k({2, 1, 1, 2}, {1, -4, 3, -5}, kF64);
  CHECK(kernel_channel_max(k) == Tensor({1, 1, 2}, {3, -4}, kF64));
}

TEST_CASE("distortion update step") {
  const Tensor e = Tensor::vector({1, 2});
  const Tensor g = Tensor::vector({0.5, -1});
  CHECK(update_distortion(e, g, 2.0, 0.5) == Tensor::vector({0.5, 3}));
}

TEST_CASE("optimize_distortion with gamma = 0 leaves epsilon at f") {
  Rng rng(8);
  const Tensor f = oracle::random_relu({4, 6}, rng);
  const Tensor w = oracle::random_normal({3, 6}, rng);
  DistortionConfig cfg;
  cfg.gamma = 0.0;
  cfg.steps_per_batch = 3;
  Rng mr(1, RngStream::kMask), sr(1, RngStream::kSigma), ar(1, RngStream::kAux);
  const DistortionOutcome out =
      optimize_distortion(f, {&w, false, {}}, cfg, GradMode::kApprox, 0.3, {&mr, &sr, &ar}, 2);
  CHECK(out.state.epsilon == f);
  CHECK(out.report.t_before == out.report.t_after);
  CHECK(out.report.layer == 2);
  Rng mr2(1, RngStream::kMask);
  CHECK(out.state.mask == sample_element_mask(f.shape(), 0.3, mr2, f.precision()));
}

TEST_CASE("exact steps lower the surrogate for small steps") {
  Rng rng(9);
  const Tensor f = oracle::random_relu({8, 32}, rng);
  const Tensor w = oracle::random_normal({16, 32}, rng);
  DistortionConfig cfg;
  cfg.gamma = 1e-3 / stddev(f);
  Rng mr(2, RngStream::kMask), sr(2, RngStream::kSigma), ar(2, RngStream::kAux);
  const DistortionOutcome out =
      optimize_distortion(f, {&w, false, {}}, cfg, GradMode::kExact, 0.5, {&mr, &sr, &ar}, 0);
  CHECK(out.report.t_after <= out.report.t_before);
  CHECK(out.report.sup_term + out.report.penalty_term == doctest::Approx(out.report.t_after));
}
