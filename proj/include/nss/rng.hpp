#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace nss {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seedable, splittable generator (xoshiro256++). Every stochastic operation
/// in the engine takes one of these explicitly; state is four words, so
/// checkpoints can serialize and restore it exactly.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection-debiased.
  std::uint64_t uniform_below(std::uint64_t n) {
    const std::uint64_t limit = n == 0 ? 0 : UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Uniform integer in [lo, hi], inclusive.
  long long uniform_int(long long lo, long long hi) {
    return lo + static_cast<long long>(uniform_below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  /// Standard Gumbel via -ln(-ln(u)), u clamped away from {0,1} by 1e-12.
  double gumbel() {
    double u = uniform();
    if (u < 1e-12) u = 1e-12;
    if (u > 1.0 - 1e-12) u = 1.0 - 1e-12;
    return -std::log(-std::log(u));
  }

  /// Standard normal (Box-Muller, no caching so state use stays predictable).
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Derive an independent child stream. Deterministic: the same parent state
  /// and stream id always yield the same child.
  Rng split(std::uint64_t stream) {
    std::uint64_t mix = next_u64() ^ (stream * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    return Rng(mix);
  }

  const State& state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  State state_{};
};

}  // namespace nss
