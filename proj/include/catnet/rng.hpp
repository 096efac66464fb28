#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "catnet/errors.hpp"

namespace catnet {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic random stream. The distribution mappings are implemented
// here rather than taken from <random> so that sequences are identical
// across standard libraries and survive checkpoint round trips bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(detail::splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n) without modulo bias.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw_error(ErrorKind::contract, "uniform_index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % n);
  }

  // Standard normal via Box-Muller; the spare value is discarded so the
  // generator stays stateless beyond the engine itself.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 == 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Independent stream derived from (base seed, stream id).
  Rng split(std::uint64_t stream_id) const {
    return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(stream_id + 1)));
  }

  std::uint64_t seed() const { return seed_; }

  std::string serialize() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    std::istringstream is(text);
    std::uint64_t seed = 0;
    is >> seed;
    Rng rng(seed);
    is >> rng.engine_;
    if (!is) throw_error(ErrorKind::checkpoint_integrity, "rng state failed to parse");
    return rng;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace catnet
