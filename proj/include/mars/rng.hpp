#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

// Deterministic randomness. All draws go through Rng's own bounded-int and
// unit-real mappings so sequences depend only on the mt19937_64 stream, not
// on stdlib distribution internals.

namespace mars {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Folds a tag and stream indices into a base seed so that independent
// consumers (per-user shuffles, per-epoch redraws) get decorrelated streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base);
  for (char c : tag) h = splitmix64(h ^ static_cast<std::uint8_t>(c));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  // uniform in [0, n), rejection sampled to avoid modulo bias
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // uniform in [0, 1)
  double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // uniform in (lo, hi) endpoints excluded up to rounding
  double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

  double normal(double mean, double stddev) {
    // Box-Muller, one value per call for reproducibility
    double u1 = real01();
    while (u1 <= 0.0) u1 = real01();
    const double u2 = real01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586477 * u2);
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

// One index drawn proportionally to nonnegative weights; uniform over all
// entries when every weight is zero.
inline std::size_t sample_weighted(const std::vector<double>& weights,
                                   Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) return static_cast<std::size_t>(rng.below(weights.size()));
  double r = rng.real01() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    r -= weights[i];
    if (r < 0.0) return i;
  }
  return weights.size() - 1;  // guard against accumulated rounding
}

}  // namespace mars
