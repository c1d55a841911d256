#include "mwf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mwf {

double RngState::normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int RngState::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("RngState::uniform_int: n must be positive");
  // Rejection sampling keeps the draw exactly uniform.
  uint64_t un = static_cast<uint64_t>(n);
  uint64_t bound = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= bound);
  return static_cast<int>(x % un);
}

std::vector<int> sample_without_replacement(int n, int count, RngState& rng) {
  if (count < 0 || count > n)
    throw std::invalid_argument("sample_without_replacement: count out of range");
  std::vector<int> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    int j = i + rng.uniform_int(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(count));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace mwf
