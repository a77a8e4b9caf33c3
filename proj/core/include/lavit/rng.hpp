#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lavit/tensor.hpp"

namespace lavit {

/// mt19937_64 with hand-rolled transforms. The engine's stream is pinned by
/// the standard; the distributions in <random> are not, so uniform/normal are
/// spelled out here to keep runs reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform in (0, 1], 53-bit resolution.
  double uniform() { return static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int64_t below(int64_t n) { return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n)); }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor randn(std::vector<int64_t> shape, double stddev = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : *t.data) v = normal(0.0, stddev);
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

/// Stable stream splitting: derive an independent seed from (seed, tag).
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace lavit
