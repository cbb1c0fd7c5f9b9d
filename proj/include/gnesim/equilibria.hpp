// First-stage analysis of the game between principals.
//
// At any equilibrium the individual-rationality constraints bind, so each
// agent's transfer column must sum to g_i(a) = e*_i - sum_j f(a_ij, e*).
// That equality removes a principal's own transfers from its cost, leaving a
// reduced game in the slopes alone; given a slope equilibrium, the transfers
// are free to move on a product of per-agent simplices, every point of which
// is again an equilibrium. The operations here compute that structure, solve
// the reduced slope game by best-response iteration, and test the two
// classical refinements (variational and normalized equilibria) on the
// resulting simplex.
#pragma once

#include <cstdint>
#include <vector>

#include "gnesim/common.hpp"
#include "gnesim/market.hpp"
#include "gnesim/stage2.hpp"

namespace gnesim {

// Polytope of transfer matrices completing a fixed slope matrix into
// equilibria: per agent i, sum_j c_ji = g[i] and c_ji >= lower_bounds(j,i).
struct SimplexDescription {
  Vec g;             // required transfer column sums, one per agent
  Mat lower_bounds;  // positivity floors, principals x agents
  Mat a_ref;         // the slope matrix this polytope extends

  // Per-agent gap g_i - sum_j lower_bounds(j,i); nonnegative iff feasible.
  Vec slack() const;
  bool feasible(double tol = 1e-9) const;
  Mat centroid() const;
};

struct GneOptions {
  double tol = 1e-10;            // outer stop: max |slope change| between sweeps
  int max_iters = 500;
  bool jacobi = false;           // simultaneous updates instead of sweeps
  double inner_tol = 1e-11;      // projected-gradient norm target per principal
  int inner_max_iters = 4000;
  double fd_step = 1e-5;         // central-difference step scale in the slopes
  int deviation_samples = 2048;  // per principal, for the certificate
  double deviation_radius = 0.5;
  double verify_tol = 1e-6;      // certificate threshold for `converged`
  std::uint64_t seed = 0x717e;
};

struct GneCandidate {
  ContractParams params;  // slopes from the fixed point, transfers at the centroid
  EffortProfile e_star;
  bool converged = false;
  int br_iterations = 0;
  // Largest cost improvement any principal found over the sampled unilateral
  // deviations; a certificate, not a proof.
  double deviation_certificate = 0.0;
};

struct KKTResult {
  // IR multipliers from the jointly stacked stationarity system.
  Vec lambda;
  // Positivity multipliers (principals x agents); inactive constraints pinned
  // to zero by complementary slackness.
  Mat nu;
  double stationarity_residual = 0.0;  // stacked first-order system at the solution
  // Row j: IR multipliers recovered from principal j's block alone.
  Mat per_principal_lambda;
  double c_block_residual = 0.0;  // transfer-block rows only
  bool degenerate = false;        // active-constraint block was rank-deficient
};

// g_i(a) = e*_i - sum_j f(a_ij, e*) with e* the induced efforts.
Vec compute_g(const MarketModel& model, const Mat& a);

// Principal cost with its own transfers eliminated through the binding IR
// equalities: sum_i (g_i - sum_{k != j} c_ki + f(a_ji, e*)) - v_j(e*).
double reduced_principal_cost(const MarketModel& model, const Mat& a, const Mat& others_c,
                              int principal);

// Principal j's cost minus its transfer total, as a function of slopes only.
double principal_cost_sans_transfers(const MarketModel& model, const Mat& a, int principal);

// Constraint evaluators in <= 0 form: IR per agent and positivity per pair.
Vec ir_constraints(const MarketModel& model, const ContractParams& params);
Mat positivity_constraints(const MarketModel& model, const ContractParams& params);

// Gauss-Seidel (or Jacobi) best-response iteration on the reduced slope
// game; each inner problem is a projected-gradient descent on a^j >= 0.
// After the slope iteration settles, transfers are picked at the simplex
// centroid and the pair is stress-tested by sampled unilateral deviations.
// Non-convergence is reported through `converged`, not an exception.
GneCandidate solve_gne(const MarketModel& model, const Mat& init_a,
                       const GneOptions& opts = {});

// The transfer polytope extending a slope matrix. simplex_of_gne requires a
// converged candidate; simplex_for_slopes serves exploratory use.
SimplexDescription simplex_for_slopes(const MarketModel& model, const Mat& a);
SimplexDescription simplex_of_gne(const MarketModel& model, const GneCandidate& gne);

// k transfer matrices uniform over each per-agent simplex (exponential
// spacings shifted by the positivity floors). Deterministic given seed.
std::vector<Mat> sample_simplex(const SimplexDescription& desc, int k, std::uint64_t seed);

// True iff every agent's expected utility at the induced efforts is zero
// within tol.
bool check_ir_binding(const MarketModel& model, const ContractParams& params, double tol);

// Stacked pseudo-gradient at x (own-block gradients; transfer entries are
// exactly one, slope entries by central differences through the effort
// response), dotted with (y - x). Both points must lie on the equilibrium
// face: |IR| <= face_tol and positivity >= -face_tol.
double ve_inner_product(const MarketModel& model, const ContractParams& x,
                        const ContractParams& y, double face_tol = 1e-8);

// Samples k pairs from the simplex and checks the inner products vanish;
// returns false (never throws) when a sampled point leaves the equilibrium
// face or an inner product exceeds tol.
bool check_ve_on_simplex(const MarketModel& model, const SimplexDescription& desc, int k,
                         std::uint64_t seed, double tol);

// Recovers KKT multipliers at a candidate: active constraints by slack <=
// active_tol, inactive multipliers zero, least-squares solve of the
// stationarity system (jointly and per principal).
KKTResult solve_kkt(const MarketModel& model, const ContractParams& params,
                    double active_tol = 1e-7);

// Normalized-equilibrium test: gamma_j * lambda^j must agree across
// principals elementwise within tol.
bool check_noe(const MarketModel& model, const ContractParams& params, const Vec& gamma,
               double tol);

// Best sampled unilateral improvement any principal can realize by jointly
// moving its slopes and re-flooring its transfers inside the shared
// feasible set. Nonnegative; ~0 at an equilibrium.
double max_deviation_improvement(const MarketModel& model, const ContractParams& params,
                                 int samples_per_principal, std::uint64_t seed,
                                 double radius = 0.5);

}  // namespace gnesim
