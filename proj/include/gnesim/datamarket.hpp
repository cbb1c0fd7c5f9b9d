// Concrete data-market instance: effort-averse sources report noisy samples
// of a target value, principals score each report against the leave-one-out
// estimate of the others and derive value from aggregate estimation quality,
// optionally penalized by competitors' quality through the zeta weights.
//
// Everything needed by the market layer has a closed form in the effort
// variances; simulate_market provides the Monte-Carlo cross-check for each
// of those expectations.
#pragma once

#include <cstdint>
#include <vector>

#include "gnesim/common.hpp"
#include "gnesim/market.hpp"

namespace gnesim {

enum class VarianceModel {
  power_law,       // sigma^2(e) = 1/e  (admits the sqrt closed form downstream)
  exponential,     // sigma^2(e) = exp(-e)
  inverse_square,  // sigma^2(e) = 1/e^2
};

enum class NoiseFamily {
  gaussian,
  uniform,  // zero-mean uniform matched to the same variance
};

struct DataMarketSpec {
  int n_agents = 0;
  int n_principals = 0;
  VarianceModel variance_model = VarianceModel::power_law;
  double phi_value = 1.0;  // true value at the single evaluation point
  Mat zeta;                // competitor weights, n_principals^2, zero diagonal
  NoiseFamily noise_family = NoiseFamily::gaussian;
  double effort_floor = kDefaultEffortFloor;
  double effort_ceiling = kDefaultEffortCeiling;
};

struct MCEstimate {
  double mean = 0.0;
  double std_error = 0.0;  // sample standard deviation / sqrt(n_samples)
  std::int64_t n_samples = 0;
};

struct SimulationResult {
  std::vector<std::vector<MCEstimate>> payments;  // [principal][agent]
  std::vector<MCEstimate> utilities;              // per agent
  std::vector<MCEstimate> costs;                  // per principal
  std::vector<MCEstimate> estimation_losses;      // per principal
};

// Noise variance at a single effort level.
double noise_variance(const DataMarketSpec& spec, double effort);

// Throws if the spec is malformed: dims, zeta signs/diagonal, and a sampled
// check that the variance model is strictly decreasing and convex on the box.
void validate_spec(const DataMarketSpec& spec);

// Mean of all reports except agent i's.
double loo_estimator(const Vec& y, int agent);

// Expected payment kernel: -a_ij * E[(y_i - loo_i)^2], which splits into the
// agent's own variance plus the leave-one-out estimator variance.
double analytic_payment_kernel(const DataMarketSpec& spec, double a_ij,
                               const EffortProfile& e, int agent);

// Expected value to a principal: own estimation loss (negated) plus
// zeta-weighted competitor losses; all principals share the same data, so
// the losses coincide and only the weights differ.
double analytic_value(const DataMarketSpec& spec, const EffortProfile& e, int principal);

// Monte-Carlo estimates of realized payments, utilities, costs and
// estimation losses. One shared draw per sample feeds every principal.
// Deterministic given (seed, n_samples): each sample consumes its own
// counter-derived random stream, so the result is independent of
// evaluation order.
SimulationResult simulate_market(const DataMarketSpec& spec, const ContractParams& params,
                                 const EffortProfile& e, std::int64_t n_samples,
                                 std::uint64_t seed);

// Adapts the closed-form expectations to the market layer; declares the
// sqrt closed form for the effort response when the variance model is the
// power law.
MarketModel bind_model(const DataMarketSpec& spec);

}  // namespace gnesim
