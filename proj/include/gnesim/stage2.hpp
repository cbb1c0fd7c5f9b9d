// Second-stage solver: the agents' dominant-strategy equilibrium effort for
// a given slope matrix. Transfers never enter — they shift utilities by a
// constant and cannot move the argmax.
//
// Dominance is certified, not assumed: the numeric path probes concavity of
// each agent's own-effort objective and the separability of that objective
// from the other agents' efforts, and raises a structure error when either
// probe fails.
#pragma once

#include <cstdint>
#include <vector>

#include "gnesim/common.hpp"
#include "gnesim/market.hpp"

namespace gnesim {

enum class BoundaryFlag : std::uint8_t { interior, at_floor, at_ceiling };

struct Stage2Solution {
  EffortProfile e_star;
  // |d/de_i sum_j f(a_ij, e) - 1| at the solution; reported as 0 at a box
  // boundary when the one-sided derivative points out of the box.
  Vec per_agent_residual;
  std::vector<BoundaryFlag> boundary_flags;
};

struct Stage2Options {
  double tol = 1e-10;              // bracket width target, effort units
  double concavity_tol = 1e-6;     // positive curvature above this fails
  double separability_tol = 1e-4;  // |cross partial| above this fails
  int probes = 7;                  // structure-check sample points
};

// Maximizes each agent's expected utility over its own effort. Uses the
// closed form declared by the model when available, otherwise golden-section
// search refined by bisection on the first-order condition. Ties at the box
// boundary break toward the floor.
Stage2Solution solve_efforts(const MarketModel& model, const Mat& a,
                             const Stage2Options& opts = {});

// Convenience overload; reads only params.a (see c_independence_check).
Stage2Solution solve_efforts(const MarketModel& model, const ContractParams& params,
                             const Stage2Options& opts = {});

// Randomized dominance certificate: for `trials` draws of rival efforts and
// own deviations, checks that no deviation beats the solution by more than
// tol (absolute plus relative). Deterministic given seed.
bool verify_dominance(const MarketModel& model, const Mat& a, const Stage2Solution& sol,
                      int trials, std::uint64_t seed, double tol = 1e-8);

// True iff the solver output is bitwise identical under both transfer
// matrices; the solver cannot read transfers, so this is an interface-level
// regression check.
bool c_independence_check(const MarketModel& model, const Mat& a, const Mat& c1,
                          const Mat& c2);

}  // namespace gnesim
