#include "disout/rng.hpp"

#include <sstream>

#include "disout/errors.hpp"

namespace disout {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(salt),
                    static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : engine_(seeded(seed, 0, 0)) {}

Rng::Rng(std::uint64_t seed, RngStream stream, std::uint64_t salt)
    : engine_(seeded(seed, static_cast<std::uint64_t>(stream), salt)) {}

double Rng::uniform() {
  return std::generate_canonical<double, 53>(engine_);
}

double Rng::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

int Rng::rademacher() { return (engine_() >> 63) ? 1 : -1; }

std::size_t Rng::below(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

std::vector<std::uint64_t> Rng::state() const {
  std::stringstream ss;
  ss << engine_;
  std::vector<std::uint64_t> words;
  std::uint64_t w = 0;
  while (ss >> w) words.push_back(w);
  return words;
}

void Rng::set_state(std::span<const std::uint64_t> words) {
  constexpr std::size_t kWords = std::mt19937_64::state_size + 1;
  if (words.size() != kWords) {
    throw FormatError("rng state must hold " + std::to_string(kWords) +
                      " words, got " + std::to_string(words.size()));
  }
  std::stringstream ss;
  for (auto w : words) ss << w << ' ';
  ss >> engine_;
  if (ss.fail()) throw FormatError("rng state words rejected");
}

}  // namespace disout
