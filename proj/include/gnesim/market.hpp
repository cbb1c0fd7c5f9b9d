// Market instance definition, expected payoff evaluation and the feasibility
// predicates (individual rationality, ex-ante payment positivity).
//
// All quantities here are expectations: a contract pays c_ij plus an
// effort-dependent component whose expectation is payment_kernel, and a
// principal derives value value_fn from the induced effort profile.
#pragma once

#include <cstdint>
#include <functional>

#include "gnesim/common.hpp"

namespace gnesim {

inline constexpr double kDefaultEffortFloor = 1e-6;
inline constexpr double kDefaultEffortCeiling = 1e6;
inline constexpr double kDefaultFeasibilityTol = 1e-9;

// Expected effort-dependent payment component f(a_ij, e) offered by
// `principal` to `agent`. The agent index matters: kernels typically score
// an agent's report against the others' reports.
using PaymentKernel =
    std::function<double(int principal, int agent, double a_ij, const EffortProfile& e)>;

// Expected value v(e) derived by `principal` at effort profile e.
using ValueFn = std::function<double(int principal, const EffortProfile& e)>;

// Declares a closed form for the agents' effort response, when the kernel
// family admits one.
enum class EffortClosedForm {
  none,           // solve each agent's problem numerically
  sqrt_slope_sum  // e*_i = sqrt(sum_j a_ij), clipped to the effort box
};

struct MarketModel {
  int n_agents = 0;
  int n_principals = 0;
  PaymentKernel payment_kernel;
  ValueFn value_fn;
  // Effort domain. The floor keeps kernels with a 1/e-type variance well
  // posed when all slopes vanish; the ceiling bounds numeric search.
  double effort_floor = kDefaultEffortFloor;
  double effort_ceiling = kDefaultEffortCeiling;
  EffortClosedForm effort_closed_form = EffortClosedForm::none;
};

// Contract parameters for all principal/agent pairs. Rows index principals,
// columns index agents. Slopes `a` must be nonnegative.
struct ContractParams {
  Mat c;  // constant transfers
  Mat a;  // effort-sensitivity slopes
};

struct FeasibilityReport {
  Vec ir_slack;       // expected utility per agent
  Mat payment_slack;  // expected payment per (principal, agent) pair
  bool ir_ok = false;
  bool positivity_ok = false;
};

// Argument validation shared by the payoff evaluators. Throws
// std::domain_error / std::out_of_range / std::invalid_argument.
void check_effort_domain(const MarketModel& model, const EffortProfile& e);
void check_params(const MarketModel& model, const ContractParams& params);
void check_agent_index(const MarketModel& model, int agent);
void check_principal_index(const MarketModel& model, int principal);

// Expected payment from `principal` to `agent`: c_ij + f(a_ij, e).
double expected_payment(const MarketModel& model, const ContractParams& params,
                        const EffortProfile& e, int agent, int principal);

// Expected utility of `agent`: sum of expected payments received minus own
// effort (utility is quasilinear in efforts and payments).
double agent_expected_utility(const MarketModel& model, const ContractParams& params,
                              const EffortProfile& e, int agent);

// Expected cost of `principal`: payments issued minus value derived.
double principal_expected_cost(const MarketModel& model, const ContractParams& params,
                               const EffortProfile& e, int principal);

// Exact slacks for the individual-rationality and positivity constraints,
// with pass/fail flags under an absolute tolerance.
FeasibilityReport check_feasibility(const MarketModel& model, const ContractParams& params,
                                    const EffortProfile& e,
                                    double tol = kDefaultFeasibilityTol);

// Spot-checks the model contract at sampled points: kernel and value finite
// on the effort box, and finite-difference derivative estimates stable under
// step refinement (a smoothness probe, not a proof).
void validate_model(const MarketModel& model, const Mat& probe_a, int probes = 5,
                    std::uint64_t seed = 0);

}  // namespace gnesim
