#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace mwf {

// splitmix64 finalizer; used as the avalanche for RngState and stream derivation.
inline uint64_t hash_mix(uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

// Counter-based PRNG. The (seed, position) pair fully determines the stream:
// draw i is a pure function of (seed, i), so the state serializes to two
// integers and replays exactly on any platform.
class RngState {
 public:
  explicit RngState(uint64_t seed = 0, uint64_t position = 0)
      : seed_(seed), pos_(position) {}

  uint64_t seed() const { return seed_; }
  uint64_t position() const { return pos_; }

  uint64_t next_u64() {
    uint64_t z = seed_ + (++pos_) * 0x9E3779B97F4A7C15ULL;
    return hash_mix(z);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two draws per sample.
  double normal();

  // [0, n); n > 0
  int uniform_int(int n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // Independent child stream keyed by up to three integers. Derivation is a
  // pure function of (seed, keys), so derived streams never depend on how far
  // the parent has advanced.
  RngState derive(uint64_t tag, uint64_t a = 0, uint64_t b = 0) const {
    uint64_t h = hash_mix(seed_ ^ 0x6C62272E07BB0142ULL);
    h = hash_mix(h ^ tag);
    h = hash_mix(h ^ a);
    h = hash_mix(h ^ b);
    return RngState(h, 0);
  }

 private:
  uint64_t seed_;
  uint64_t pos_;
};

// Draws `count` distinct values from [0, n) uniformly, returned sorted.
std::vector<int> sample_without_replacement(int n, int count, RngState& rng);

}  // namespace mwf
