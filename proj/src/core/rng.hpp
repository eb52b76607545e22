#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace headsdf {

// Deterministic stream RNG built on splitmix64. Every stochastic choice in the
// pipeline (weight init, ray picks, jitter, probe points) draws from one of
// these with an explicit seed, so identical seeds give bit-identical runs on
// any platform. std::random distributions are implementation-defined, which is
// why the uniform/normal transforms are spelled out here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per call so
  // the stream position never depends on rejection luck.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n).
  int64_t index(int64_t n) {
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Derive an independent child stream from a label. Gives each weight matrix
  // and subsystem its own stream so adding a consumer in one place cannot
  // shift the draws seen by another.
  Rng fork(std::string_view label) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    Rng child(state_ ^ (h + 0x6a09e667f3bcc909ull));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
};

}  // namespace headsdf
