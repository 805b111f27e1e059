#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dvkit {

// All randomness in the toolkit flows through this wrapper. mt19937_64 is
// bit-specified by the standard; the distributions below are hand-rolled so
// streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // [0, n), unbiased
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= lim);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Derives an independent stream from a base seed and a label, so stages and
// per-item streams do not depend on call order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return splitmix64(seed ^ h);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a) {
  return splitmix64(seed ^ splitmix64(a));
}

}  // namespace dvkit
