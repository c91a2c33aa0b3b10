#include "epiray/rng.hpp"

#include <cmath>

namespace epiray {

double DeterministicRng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  // u1 in (0,1]: add one ulp-step before scaling so log(u1) is finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

void DeterministicRng::fill_normal(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
}

void DeterministicRng::fill_uniform(Tensor& t, double lo, double hi) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
}

DeterministicRng DeterministicRng::fork(std::uint64_t tag) const {
  // One SplitMix64 mix of (state, tag); decorrelates child streams.
  std::uint64_t z = state_ ^ (tag * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return DeterministicRng(z ^ (z >> 31));
}

}  // namespace epiray
