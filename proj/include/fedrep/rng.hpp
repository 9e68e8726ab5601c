#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

namespace fedrep {

// splitmix64: used both as a seed mixer and as the engine behind Rng.
// All randomness in the project flows through this file so that runs are
// bit-reproducible across platforms and standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a tag sequence.
inline std::uint64_t seed_combine(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t s = base ^ (0xA5A5A5A55A5A5A5AULL + tag);
  std::uint64_t mixed = splitmix64(s);
  return mixed ^ tag;
}

inline std::uint64_t seed_combine(std::uint64_t base, std::uint64_t tag1,
                                  std::uint64_t tag2) {
  return seed_combine(seed_combine(base, tag1), tag2);
}

inline std::uint64_t seed_combine(std::uint64_t base, std::uint64_t tag1,
                                  std::uint64_t tag2, std::uint64_t tag3) {
  return seed_combine(seed_combine(base, tag1, tag2), tag3);
}

// FNV-1a over raw bytes; used for content hashes of worlds and configs.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64_add(std::uint64_t h, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  return fnv1a64(&bits, sizeof bits, h);
}

inline std::uint64_t fnv1a64_add(std::uint64_t h, std::uint64_t x) {
  return fnv1a64(&x, sizeof x, h);
}

// Deterministic random stream. uniform() maps 53 engine bits to [0,1);
// normal() is Box-Muller; gamma() is Marsaglia-Tsang. None of these rely
// on std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so nearby seeds decorrelate.
    splitmix64(state_);
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    // Box-Muller without caching the second variate: deterministic and
    // stateless beyond the engine position.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang gamma sampler; alpha > 0, unit scale.
  double gamma(double alpha) {
    if (alpha < 1.0) {
      const double u = uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::vector<double> dirichlet(double alpha, std::size_t n) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& x : p) {
      x = gamma(alpha);
      sum += x;
    }
    if (sum <= 0.0) {
      // All-zero draw is possible only for pathologically small alpha.
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(n));
      return p;
    }
    for (auto& x : p) x /= sum;
    return p;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    k = std::min(k, n);
    for (int i = 0; i < k; ++i) {
      const auto j =
          i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[static_cast<std::size_t>(i)],
                idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  }

 private:
  std::uint64_t state_;
};

}  // namespace fedrep
