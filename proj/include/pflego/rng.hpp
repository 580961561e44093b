#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace pflego {

// Named substreams derived from the experiment seed. Keeping every consumer
// on its own stream means toggling one feature (say, Binomial participation)
// never perturbs the draws seen by another (say, head initialization).
enum class Stream : std::uint64_t {
  ThetaInit = 1,
  HeadInit = 2,
  Participation = 3,
  SyntheticMeans = 4,
  SyntheticSamples = 5,
  ClassAssignment = 6,
  PartitionShuffle = 7,
  SplitShuffle = 8,
};

namespace detail {
// splitmix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::uint64_t index = 0) {
  std::uint64_t x = detail::mix64(master + 0x9e3779b97f4a7c15ULL);
  x = detail::mix64(x ^ (static_cast<std::uint64_t>(stream) * 0xff51afd7ed558ccdULL));
  return detail::mix64(x ^ (index * 0xc4ceb9fe1a85ec53ULL));
}

// mt19937_64 with hand-rolled distributions. The standard distribution
// classes are implementation-defined, so results would differ across
// standard libraries; these are pinned down to the engine's output stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n); rejection keeps the modulus exact.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; the sine mate is discarded so the
  // engine state after a call does not depend on call parity.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace pflego
