#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

#include "cadm/types.hpp"

namespace cadm {

// All randomness in the project flows through this header so that runs are
// reproducible bit-for-bit from a single seed. Distributions are implemented
// here rather than taken from <random> because libstdc++'s distribution
// algorithms are unspecified and may change between releases.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from (seed, tag). Chain calls to mix in
// epoch / batch indices: derive_seed(derive_seed(s, kTag), epoch).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ull));
}

// Stream tags. Every consumer derives its own stream so that adding RNG use
// in one component never shifts the draws seen by another.
namespace seed_tag {
constexpr std::uint64_t kParamInit = 1;
constexpr std::uint64_t kBatchOrder = 2;
constexpr std::uint64_t kSynthSource = 3;
constexpr std::uint64_t kSynthTarget = 4;
constexpr std::uint64_t kPgdStart = 5;
constexpr std::uint64_t kHoldout = 6;
}  // namespace seed_tag

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0x8e1f63a4d7c52b09ull)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform in {0, ..., n-1} via 128-bit multiply (no modulo bias worth caring
  // about at these ranges, and fully deterministic).
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  // Standard normal, Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  Matrix normal_matrix(Index rows, Index cols, double stddev) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = stddev * normal();
    return m;
  }

  Vector normal_vector(Index size, double stddev) {
    Vector v(size);
    for (Index i = 0; i < size; ++i) v(i) = stddev * normal();
    return v;
  }

  // Fisher-Yates; std::shuffle is unspecified across standard libraries.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      const int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cadm
