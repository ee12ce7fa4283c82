#ifndef FCAM_RNG_HPP
#define FCAM_RNG_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace fcam {

/// Sequential generator used for every step of a chain.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer; the mixing function behind all counter-based streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed for an independent substream, e.g. chain `index` of a run seeded with `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Counter-based uniform in the open interval (0, 1).
///
/// A draw depends only on (key, counter), so per-index draws inside one
/// iteration are identical whatever the thread schedule.
class CounterStream {
 public:
  explicit CounterStream(std::uint64_t key) noexcept : key_(splitmix64(key)) {}

  double uniform(std::uint64_t counter) const noexcept {
    const std::uint64_t bits = splitmix64(key_ ^ splitmix64(counter));
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t key_;
};

inline double uniform01(Rng& rng) {
  // std::generate_canonical may return exactly 0; keep log(u) finite.
  const double u = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return u;
}

inline double normal(Rng& rng, double mean, double sd) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

/// Gamma draw with shape/rate parameterization (mean shape/rate).
inline double gamma_rate(Rng& rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

/// log of a Ga(shape, 1) draw, accurate when shape is tiny and the draw underflows.
inline double log_gamma_draw(Rng& rng, double shape) {
  if (shape >= 1.0) {
    return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  }
  // Ga(a) = Ga(a + 1) * U^(1/a)
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  return std::log(g) + std::log(uniform01(rng)) / shape;
}

inline double beta_draw(Rng& rng, double a, double b) {
  const double la = log_gamma_draw(rng, a);
  const double lb = log_gamma_draw(rng, b);
  const double m = std::max(la, lb);
  return std::exp(la - m) / (std::exp(la - m) + std::exp(lb - m));
}

}  // namespace fcam

#endif  // FCAM_RNG_HPP
