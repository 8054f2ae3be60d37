#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace disout {

/// Independent sub-streams derived from one run seed. Each consumer draws
/// from its own stream so that, e.g., a dropout run and a distortion run with
/// the same seed see identical masks even though only the latter draws σ.
enum class RngStream : std::uint32_t {
  kInit = 1,     // weight initialization
  kMask = 2,     // distortion / dropout masks
  kSigma = 3,    // Rademacher signs
  kAux = 4,      // u, S', U for approximate gradients
  kAugment = 5,  // data augmentation
  kShuffle = 6,  // epoch permutations (combined with the epoch number)
  kData = 7,     // synthetic datasets
};

/// Seeded 64-bit Mersenne Twister with the handful of draws the library
/// needs. Every distribution is constructed per draw, so the generator words
/// are the complete state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  Rng(std::uint64_t seed, RngStream stream, std::uint64_t salt = 0);

  /// Uniform in [0, 1).
  double uniform();
  double normal();
  bool bernoulli(double p);
  /// −1 or +1 with equal probability.
  int rademacher();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher–Yates with our own bounded draws so the permutation does not
    // depend on the standard library's shuffle algorithm.
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

  /// Raw generator words (state array followed by the position index).
  [[nodiscard]] std::vector<std::uint64_t> state() const;
  void set_state(std::span<const std::uint64_t> words);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace disout
