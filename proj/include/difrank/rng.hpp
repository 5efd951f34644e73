#ifndef DIFRANK_RNG_HPP_
#define DIFRANK_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace difrank {

/// SplitMix64 finalizer: a bijective 64-bit mixing function.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based SplitMix64 stream. Output n is
///   splitmix64_mix(key + (n + 1) * 0x9E3779B97F4A7C15)
/// so any draw is reproducible from (key, n) alone. split(id) derives an
/// independent child stream keyed by splitmix64_mix(key ^ splitmix64_mix(id)).
///
/// Derived draws are fixed so other implementations can replay streams:
///   uniform01  = (next() >> 11) * 2^-53                       in [0, 1)
///   normal     = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)          (Box-Muller,
///                two uniform01 draws, second variate discarded)
///   below(n)   = floor(uniform01 * n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(splitmix64_mix(seed)) {}

  std::uint64_t next() {
    ++counter_;
    return splitmix64_mix(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();
  std::size_t below(std::size_t n);

  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

  Rng split(std::uint64_t stream_id) const {
    Rng child(0);
    child.key_ = splitmix64_mix(key_ ^ splitmix64_mix(stream_id));
    return child;
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace difrank

#endif  // DIFRANK_RNG_HPP_
