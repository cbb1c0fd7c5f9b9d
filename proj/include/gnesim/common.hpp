// Shared aliases, error types and the seed-derivation helper used by every
// randomized routine in the library.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gnesim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Effort vector, one entry per agent.
using EffortProfile = Vec;

// Raised when an instance violates a structural requirement (non-concave
// agent objective, undefined leave-one-out estimator, ...).
struct structure_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a constraint system has no feasible point.
struct infeasible_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SplitMix64 step; the workhorse for counter-derived random streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Hashes (seed, stream) into a decorrelated sub-stream state, so that draws
// are independent of the order in which streams are consumed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Uniform double in [0, 1).
inline double next_u01(std::uint64_t& state) {
  return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double next_uniform(std::uint64_t& state, double lo, double hi) {
  return lo + (hi - lo) * next_u01(state);
}

// Standard normal via the polar method; consumes a variable number of
// uniforms but is deterministic per stream state.
inline double next_gaussian(std::uint64_t& state) {
  for (;;) {
    const double u = 2.0 * next_u01(state) - 1.0;
    const double v = 2.0 * next_u01(state) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) {
      return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }
}

}  // namespace gnesim
