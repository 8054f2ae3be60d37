#include <cmath>
#include <set>

#include "disout/errors.hpp"
#include "disout/rng.hpp"
#include "doctest.h"

using namespace disout;

TEST_CASE("same seed, same stream") {
  Rng a(42, RngStream::kMask), b(42, RngStream::kMask);
  for (int i = 0; i < 100; ++i) CHECK(a.uniform() == b.uniform());
}

TEST_CASE("streams and salts are independent sequences") {
  Rng mask(42, RngStream::kMask), sigma(42, RngStream::kSigma);
  Rng e0(42, RngStream::kShuffle, 0), e1(42, RngStream::kShuffle, 1);
  CHECK(mask.uniform() != sigma.uniform());
  CHECK(e0.uniform() != e1.uniform());
}

TEST_CASE("state round-trip resumes the sequence") {
  Rng a(9);
  for (int i = 0; i < 37; ++i) a.normal();
  const auto words = a.state();
  CHECK(words.size() == 313);
  Rng b(0);
  b.set_state(words);
  CHECK(a == b);
  for (int i = 0; i < 50; ++i) CHECK(a.normal() == b.normal());
  CHECK_THROWS_AS(b.set_state(std::vector<std::uint64_t>(5)), FormatError);
}

TEST_CASE("draw ranges") {
  Rng r(1);
  std::set<int> signs;
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
    signs.insert(r.rademacher());
  }
  CHECK(signs == std::set<int>{-1, 1});
  CHECK_FALSE(r.bernoulli(0.0));
}

TEST_CASE("moments of uniform and normal draws") {
  Rng r(2);
  const int n = 200000;
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    su += r.uniform();
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  // Tolerances are 5 standard errors.
  CHECK(std::abs(su / n - 0.5) < 5.0 * 0.2887 / 447.2);
  CHECK(std::abs(sn / n) < 5.0 / 447.2);
  CHECK(std::abs(sn2 / n - 1.0) < 5.0 * 1.4142 / 447.2);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(3);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 50);
}
