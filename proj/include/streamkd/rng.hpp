#pragma once

#include <cstdint>
#include <random>

namespace streamkd {

/// Deterministic random stream. All randomness in the project flows through
/// this wrapper so that a (seed, purpose, step) triple always reproduces the
/// same draws, independent of platform stdlib distribution details.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// standard normal via Box-Muller; consumes exactly two uniforms
  double gaussian();

  bool chance(double p) { return uniform() < p; }

  /// uniform index in [0, n); n must be positive
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
  }

 private:
  std::mt19937_64 gen_;
};

/// splitmix64-style combiner for deriving independent sub-streams
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

// fixed purpose tags for sub-stream derivation
namespace seed_tag {
inline constexpr std::uint64_t events = 0x6576656e74736b64ULL;
inline constexpr std::uint64_t sampling = 0x73616d706c656b64ULL;
inline constexpr std::uint64_t eval = 0x6576616c6b640000ULL;
inline constexpr std::uint64_t init = 0x696e69746b640000ULL;
inline constexpr std::uint64_t fault = 0x6661756c746b6400ULL;
}  // namespace seed_tag

}  // namespace streamkd
