#include <cmath>
#include <limits>

#include "disout/errors.hpp"
#include "disout/tensor.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace disout;

TEST_CASE("matmul variants agree with the loop oracle") {
  Rng rng(3);
  const Tensor a = oracle::random_normal({5, 7}, rng);
  const Tensor b = oracle::random_normal({7, 4}, rng);
  const Tensor ref = oracle::matmul(a, b);
  CHECK(oracle::max_abs_diff(matmul(a, b), ref) < 1e-12);
  CHECK(oracle::max_abs_diff(matmul_tn(transpose(a), b), ref) < 1e-12);
  CHECK(oracle::max_abs_diff(matmul_nt(a, transpose(b)), ref) < 1e-12);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Tensor({2, 3}), Tensor({4, 2})), DimensionError);
}

TEST_CASE("literal tensors and element access") {
  const Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(m.shape() == Shape{2, 3});
  CHECK(m.at(1, 2) == 6.0);
  CHECK(column_max(m) == Tensor::vector({4, 5, 6}));
  CHECK(transpose(m).at(2, 1) == 6.0);
}

TEST_CASE("F32 tensors hold float-representable values") {
  const Tensor t({1}, {0.1}, Precision::F32);
  CHECK(t[0] == static_cast<double>(0.1f));
  const Tensor s = add(t, t);
  CHECK(s[0] == static_cast<double>(0.1f + 0.1f));
  const Tensor wide = add(t, Tensor({1}, {0.1}, Precision::F64));
  CHECK(wide.precision() == Precision::F64);
}

TEST_CASE("non-finite values are rejected") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Tensor({1}, {nan}), NumericError);
  CHECK_THROWS_AS(scale(Tensor::vector({1e308}), 1e10), NumericError);
}

TEST_CASE("conv2d matches the loop oracle across geometries") {
  Rng rng(5);
  for (std::size_t stride : {1, 2, 3}) {
    for (std::size_t pad : {0, 1, 2}) {
      const Tensor x = oracle::random_normal({2, 3, 7, 6}, rng);
      const Tensor k = oracle::random_normal({4, 3, 3, 2}, rng);
      const Tensor got = conv2d(x, k, {stride, pad});
      const Tensor ref = oracle::conv2d(x, k, stride, pad);
      REQUIRE(got.shape() == ref.shape());
      CHECK(oracle::max_abs_diff(got, ref) < 1e-10);
    }
  }
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  Rng rng(6);
  for (std::size_t stride : {1, 2}) {
    const ConvGeometry g{stride, 1};
    const Tensor x = oracle::random_normal({2, 3, 7, 7}, rng);
    const Tensor k = oracle::random_normal({4, 3, 3, 3}, rng);
    const Tensor y = conv2d(x, k, g);
    const Tensor r = oracle::random_normal(y.shape(), rng);
    const Tensor xt = conv2d_transpose(r, k, g, std::pair<std::size_t, std::size_t>{7, 7});
    CHECK(xt.shape() == x.shape());
    CHECK(dot(y, r) == doctest::Approx(dot(x, xt)).epsilon(1e-12));
  }
}

TEST_CASE("conv2d_kernel_grad is the kernel adjoint") {
  Rng rng(7);
  const ConvGeometry g{2, 1};
  const Tensor x = oracle::random_normal({2, 2, 6, 5}, rng);
  const Tensor k = oracle::random_normal({3, 2, 3, 3}, rng);
  const Tensor r = oracle::random_normal(conv2d(x, k, g).shape(), rng);
  const Tensor gk = conv2d_kernel_grad(x, r, 3, 3, g);
  const Tensor dk = oracle::random_normal(k.shape(), rng);
  // Linear in the kernel: ⟨conv(x, dk), r⟩ = ⟨dk, gk⟩.
  CHECK(dot(conv2d(x, dk, g), r) == doctest::Approx(dot(dk, gk)).epsilon(1e-12));
}

TEST_CASE("conv output extent") {
  CHECK(conv_output_extent(28, 5, {}) == 24);
  CHECK(conv_output_extent(7, 3, {2, 1}) == 4);
  CHECK_THROWS_AS(conv_output_extent(2, 5, {}), DimensionError);
}

TEST_CASE("maxpool picks the window maximum and breaks ties low") {
  const Tensor x({1, 1, 2, 4}, {1, 3, 2, 2, 3, 0, 2, 2}, Precision::F64);
  const PoolResult p = maxpool2d(x, 2, 2);
  CHECK(p.output == Tensor({1, 1, 1, 2}, {3, 2}, Precision::F64));
  CHECK(p.argmax == std::vector<std::size_t>{1, 2});
  const Tensor g = maxpool2d_backward(Tensor({1, 1, 1, 2}, {5, 7}, Precision::F64),
                                      p.argmax, x.shape());
  CHECK(g == Tensor({1, 1, 2, 4}, {0, 5, 7, 0, 0, 0, 0, 0}, Precision::F64));
}

TEST_CASE("overlapping pool windows accumulate gradient") {
  const Tensor x({1, 1, 3, 3}, {0, 0, 0, 0, 9, 0, 0, 0, 0}, Precision::F64);
  const PoolResult p = maxpool2d(x, 2, 1);
  CHECK(p.output.size() == 4);
  const Tensor g = maxpool2d_backward(Tensor::full({1, 1, 2, 2}, 1.0, Precision::F64),
                                      p.argmax, x.shape());
  CHECK(g[4] == 4.0);
  CHECK(sum(g) == 4.0);
}

TEST_CASE("reductions") {
  const Tensor v = Tensor::vector({1, 2, 3, 4});
  CHECK(sum(v) == 10.0);
  CHECK(mean(v) == 2.5);
  CHECK(stddev(v) == doctest::Approx(std::sqrt(1.25)));
  CHECK(sign(Tensor::vector({-2, 0, 3})) == Tensor::vector({-1, 0, 1}));
  CHECK(argmax(Tensor::matrix({{1, 5, 5}, {7, 0, 7}}), 1) ==
        std::vector<std::size_t>{1, 0});
}

TEST_CASE("reshape keeps values and checks the size") {
  const Tensor v = Tensor::vector({1, 2, 3, 4, 5, 6});
  CHECK(v.reshaped({2, 3}).at(1, 0) == 4.0);
  CHECK_THROWS_AS((void)v.reshaped({4, 2}), DimensionError);
}
