#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace detm {

// Deterministic random source. All draws go through explicit transforms
// (rejection sampling for bounded ints, Box-Muller for normals) instead of
// std::*_distribution, so streams are reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling avoids modulo bias.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent seed from a base seed and a purpose tag, so the
// pipeline stages (split, init, shuffle, sampling) get decoupled streams.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// FNV-1a over arbitrary bytes; the project's stable content hash.
std::uint64_t fnv1a(std::string_view bytes);
std::uint64_t fnv1a_extend(std::uint64_t state, std::string_view bytes);
std::string hash_hex(std::uint64_t h);

}  // namespace detm
