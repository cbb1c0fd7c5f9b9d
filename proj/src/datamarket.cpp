#include "gnesim/datamarket.hpp"

#include <cmath>
#include <sstream>

namespace gnesim {

double noise_variance(const DataMarketSpec& spec, double effort) {
  switch (spec.variance_model) {
    case VarianceModel::power_law:
      return 1.0 / effort;
    case VarianceModel::exponential:
      return std::exp(-effort);
    case VarianceModel::inverse_square:
      return 1.0 / (effort * effort);
  }
  throw std::logic_error("unknown variance model");
}

void validate_spec(const DataMarketSpec& spec) {
  if (spec.n_agents < 1 || spec.n_principals < 1) {
    throw std::invalid_argument("spec requires at least one agent and one principal");
  }
  if (!(spec.effort_floor > 0.0) || !(spec.effort_ceiling > spec.effort_floor)) {
    throw std::invalid_argument("effort box requires 0 < floor < ceiling");
  }
  if (spec.zeta.rows() != spec.n_principals || spec.zeta.cols() != spec.n_principals) {
    throw std::invalid_argument("zeta must be n_principals x n_principals");
  }
  if ((spec.zeta.array() < 0.0).any()) {
    throw std::invalid_argument("zeta weights must be nonnegative");
  }
  for (int j = 0; j < spec.n_principals; ++j) {
    if (spec.zeta(j, j) != 0.0) {
      throw std::invalid_argument("zeta must have a zero diagonal");
    }
  }
  if (!std::isfinite(spec.phi_value)) {
    throw std::invalid_argument("phi_value must be finite");
  }
  // Sampled monotonicity/convexity check of the variance model: strictly
  // decreasing and convex across a geometric grid of the box.
  const int kProbes = 24;
  const double lf = std::log(spec.effort_floor);
  const double lc = std::log(spec.effort_ceiling);
  double prev = noise_variance(spec, spec.effort_floor);
  double prev_e = spec.effort_floor;
  double prev_slope = 0.0;
  bool have_slope = false;
  for (int p = 1; p <= kProbes; ++p) {
    const double e = std::exp(lf + (lc - lf) * p / kProbes);
    const double v = noise_variance(spec, e);
    if (!std::isfinite(v) || v < 0.0) {
      throw structure_error("variance model must be finite and nonnegative on the box");
    }
    if (v >= prev) {
      throw structure_error("variance model must be strictly decreasing on the effort box");
    }
    const double slope = (v - prev) / (e - prev_e);
    if (have_slope && slope < prev_slope - 1e-12 * (1.0 + std::abs(prev_slope))) {
      throw structure_error("variance model must be convex on the effort box");
    }
    prev_slope = slope;
    have_slope = true;
    prev = v;
    prev_e = e;
  }
}

double loo_estimator(const Vec& y, int agent) {
  const int n = static_cast<int>(y.size());
  if (n < 2) {
    throw structure_error("leave-one-out estimator undefined for fewer than two reports");
  }
  if (agent < 0 || agent >= n) {
    throw std::out_of_range("agent index out of range in loo_estimator");
  }
  return (y.sum() - y[agent]) / static_cast<double>(n - 1);
}

namespace {

// Leave-one-out estimator variance: the part of the score the agent cannot
// influence.
double loo_variance(const DataMarketSpec& spec, const EffortProfile& e, int agent) {
  const int n = spec.n_agents;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    if (k != agent) acc += noise_variance(spec, e[k]);
  }
  const double m = static_cast<double>(n - 1);
  return acc / (m * m);
}

void check_efforts(const DataMarketSpec& spec, const EffortProfile& e) {
  if (e.size() != spec.n_agents) {
    throw std::invalid_argument("effort profile has wrong length");
  }
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (!std::isfinite(e[i]) || e[i] < spec.effort_floor || e[i] > spec.effort_ceiling) {
      std::ostringstream os;
      os << "effort e[" << i << "] = " << e[i] << " outside the admissible box";
      throw std::domain_error(os.str());
    }
  }
}

double competitor_weight_sum(const DataMarketSpec& spec, int principal) {
  double z = 0.0;
  for (int k = 0; k < spec.n_principals; ++k) {
    if (k != principal) z += spec.zeta(k, principal);
  }
  return z;
}

}  // namespace

double analytic_payment_kernel(const DataMarketSpec& spec, double a_ij,
                               const EffortProfile& e, int agent) {
  if (a_ij < 0.0 || !std::isfinite(a_ij)) {
    throw std::domain_error("slope must be finite and nonnegative");
  }
  if (agent < 0 || agent >= spec.n_agents) {
    throw std::out_of_range("agent index out of range");
  }
  if (spec.n_agents < 2) {
    throw structure_error("payment kernel needs at least two agents (leave-one-out score)");
  }
  check_efforts(spec, e);
  return -a_ij * (noise_variance(spec, e[agent]) + loo_variance(spec, e, agent));
}

double analytic_value(const DataMarketSpec& spec, const EffortProfile& e, int principal) {
  if (principal < 0 || principal >= spec.n_principals) {
    throw std::out_of_range("principal index out of range");
  }
  check_efforts(spec, e);
  // Full-mean aggregator at a single location: loss = sum_i sigma^2(e_i)/N^2,
  // identical for every principal because the data are shared.
  double loss = 0.0;
  for (int i = 0; i < spec.n_agents; ++i) {
    loss += noise_variance(spec, e[i]);
  }
  loss /= static_cast<double>(spec.n_agents) * static_cast<double>(spec.n_agents);
  return (competitor_weight_sum(spec, principal) - 1.0) * loss;
}

namespace {

struct Welford {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  MCEstimate estimate() const {
    MCEstimate out;
    out.n_samples = n;
    out.mean = mean;
    out.std_error = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    return out;
  }
};

double draw_noise(const DataMarketSpec& spec, std::uint64_t& state, double variance) {
  const double sd = std::sqrt(variance);
  switch (spec.noise_family) {
    case NoiseFamily::gaussian:
      return sd * next_gaussian(state);
    case NoiseFamily::uniform:
      // Var(U[-w, w]) = w^2/3, so w = sd * sqrt(3).
      return sd * std::sqrt(3.0) * (2.0 * next_u01(state) - 1.0);
  }
  throw std::logic_error("unknown noise family");
}

}  // namespace

SimulationResult simulate_market(const DataMarketSpec& spec, const ContractParams& params,
                                 const EffortProfile& e, std::int64_t n_samples,
                                 std::uint64_t seed) {
  validate_spec(spec);
  check_efforts(spec, e);
  if (n_samples < 2) {
    throw std::invalid_argument("simulate_market needs at least two samples");
  }
  if (spec.n_agents < 2) {
    throw structure_error("simulation needs at least two agents (leave-one-out score)");
  }
  const int n = spec.n_agents;
  const int m = spec.n_principals;
  if (params.c.rows() != m || params.c.cols() != n || params.a.rows() != m ||
      params.a.cols() != n) {
    throw std::invalid_argument("contract parameter matrices must be n_principals x n_agents");
  }
  if ((params.a.array() < 0.0).any()) {
    throw std::domain_error("contract slopes must be nonnegative");
  }

  std::vector<std::vector<Welford>> pay(m, std::vector<Welford>(n));
  std::vector<Welford> util(n), cost(m), loss(m);
  Vec variances(n);
  for (int i = 0; i < n; ++i) variances[i] = noise_variance(spec, e[i]);

  Vec y(n), score(n);
  for (std::int64_t s = 0; s < n_samples; ++s) {
    std::uint64_t state = mix_seed(seed, static_cast<std::uint64_t>(s));
    for (int i = 0; i < n; ++i) {
      y[i] = spec.phi_value + draw_noise(spec, state, variances[i]);
    }
    const double total = y.sum();
    for (int i = 0; i < n; ++i) {
      const double loo = (total - y[i]) / static_cast<double>(n - 1);
      const double d = y[i] - loo;
      score[i] = d * d;
    }
    const double agg = total / static_cast<double>(n);
    const double est_loss = (spec.phi_value - agg) * (spec.phi_value - agg);

    for (int i = 0; i < n; ++i) {
      double received = 0.0;
      for (int j = 0; j < m; ++j) {
        const double p = params.c(j, i) - params.a(j, i) * score[i];
        pay[j][i].add(p);
        received += p;
      }
      util[i].add(received - e[i]);
    }
    for (int j = 0; j < m; ++j) {
      double paid = 0.0;
      for (int i = 0; i < n; ++i) {
        paid += params.c(j, i) - params.a(j, i) * score[i];
      }
      const double value = (competitor_weight_sum(spec, j) - 1.0) * est_loss;
      cost[j].add(paid - value);
      loss[j].add(est_loss);
    }
  }

  SimulationResult out;
  out.payments.resize(m);
  for (int j = 0; j < m; ++j) {
    out.payments[j].reserve(n);
    for (int i = 0; i < n; ++i) out.payments[j].push_back(pay[j][i].estimate());
  }
  for (int i = 0; i < n; ++i) out.utilities.push_back(util[i].estimate());
  for (int j = 0; j < m; ++j) out.costs.push_back(cost[j].estimate());
  for (int j = 0; j < m; ++j) out.estimation_losses.push_back(loss[j].estimate());
  return out;
}

MarketModel bind_model(const DataMarketSpec& spec) {
  validate_spec(spec);
  MarketModel model;
  model.n_agents = spec.n_agents;
  model.n_principals = spec.n_principals;
  model.effort_floor = spec.effort_floor;
  model.effort_ceiling = spec.effort_ceiling;
  model.payment_kernel = [spec](int /*principal*/, int agent, double a_ij,
                                const EffortProfile& e) {
    return analytic_payment_kernel(spec, a_ij, e, agent);
  };
  model.value_fn = [spec](int principal, const EffortProfile& e) {
    return analytic_value(spec, e, principal);
  };
  model.effort_closed_form = spec.variance_model == VarianceModel::power_law
                                 ? EffortClosedForm::sqrt_slope_sum
                                 : EffortClosedForm::none;
  return model;
}

}  // namespace gnesim
