#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dpnet {

// Deterministic random source. std::normal_distribution and std::shuffle are
// implementation-defined, so the transforms are spelled out here: checkpoints
// must be bit-identical across standard libraries for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = eng_();
    } while (v >= limit);
    return v % n;
  }

  // Standard normal via Box-Muller (one value per call; pairs cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent stream for a named substream (layer index, image index, ...).
  // SplitMix64 over seed^tag gives well-separated streams.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dpnet
