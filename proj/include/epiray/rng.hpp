#pragma once

#include <cstdint>

#include "epiray/tensor.hpp"

namespace epiray {

/// Counter-based deterministic PRNG (SplitMix64).
///
/// The state walks an arithmetic sequence: state_i = seed + (i+1) * 0x9E3779B97F4A7C15
/// (the increment is odd, so the walk covers the full 2^64 cycle). Each draw is a
/// fixed xor-shift-multiply mix of the state, so draw i is a pure function of
/// (seed, i) and identical seeds give identical streams on every platform.
///
/// uniform() maps the top 53 bits to [0,1).
/// normal() uses the Box-Muller transform on two uniforms; the first uniform is
/// shifted into (0,1] so log() is always finite. Normal variates are produced in
/// pairs and the second of each pair is cached, so the stream consumes exactly
/// two 64-bit draws per pair.
class DeterministicRng {
 public:
  explicit DeterministicRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal variate (Box-Muller).
  double normal();

  void fill_normal(Tensor& t);
  void fill_uniform(Tensor& t, double lo, double hi);

  /// Derives an independent stream: a fixed mix of this seed and the tag.
  /// Never consumes from the parent stream.
  DeterministicRng fork(std::uint64_t tag) const;

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace epiray
