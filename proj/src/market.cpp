#include "gnesim/market.hpp"

#include <cmath>
#include <sstream>

namespace gnesim {

void check_agent_index(const MarketModel& model, int agent) {
  if (agent < 0 || agent >= model.n_agents) {
    std::ostringstream os;
    os << "agent index " << agent << " out of range [0, " << model.n_agents << ")";
    throw std::out_of_range(os.str());
  }
}

void check_principal_index(const MarketModel& model, int principal) {
  if (principal < 0 || principal >= model.n_principals) {
    std::ostringstream os;
    os << "principal index " << principal << " out of range [0, " << model.n_principals << ")";
    throw std::out_of_range(os.str());
  }
}

void check_effort_domain(const MarketModel& model, const EffortProfile& e) {
  if (e.size() != model.n_agents) {
    throw std::invalid_argument("effort profile has wrong length");
  }
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (!std::isfinite(e[i]) || e[i] < model.effort_floor || e[i] > model.effort_ceiling) {
      std::ostringstream os;
      os << "effort e[" << i << "] = " << e[i] << " outside [" << model.effort_floor << ", "
         << model.effort_ceiling << "]";
      throw std::domain_error(os.str());
    }
  }
}

void check_params(const MarketModel& model, const ContractParams& params) {
  if (params.c.rows() != model.n_principals || params.c.cols() != model.n_agents ||
      params.a.rows() != model.n_principals || params.a.cols() != model.n_agents) {
    throw std::invalid_argument("contract parameter matrices must be n_principals x n_agents");
  }
  if (!params.c.allFinite() || !params.a.allFinite()) {
    throw std::domain_error("contract parameters must be finite");
  }
  if ((params.a.array() < 0.0).any()) {
    throw std::domain_error("contract slopes must be nonnegative");
  }
}

double expected_payment(const MarketModel& model, const ContractParams& params,
                        const EffortProfile& e, int agent, int principal) {
  check_agent_index(model, agent);
  check_principal_index(model, principal);
  check_params(model, params);
  check_effort_domain(model, e);
  return params.c(principal, agent) +
         model.payment_kernel(principal, agent, params.a(principal, agent), e);
}

double agent_expected_utility(const MarketModel& model, const ContractParams& params,
                              const EffortProfile& e, int agent) {
  check_agent_index(model, agent);
  check_params(model, params);
  check_effort_domain(model, e);
  double total = 0.0;
  for (int j = 0; j < model.n_principals; ++j) {
    total += params.c(j, agent) + model.payment_kernel(j, agent, params.a(j, agent), e);
  }
  return total - e[agent];
}

double principal_expected_cost(const MarketModel& model, const ContractParams& params,
                               const EffortProfile& e, int principal) {
  check_principal_index(model, principal);
  check_params(model, params);
  check_effort_domain(model, e);
  double payments = 0.0;
  for (int i = 0; i < model.n_agents; ++i) {
    payments += params.c(principal, i) + model.payment_kernel(principal, i, params.a(principal, i), e);
  }
  return payments - model.value_fn(principal, e);
}

FeasibilityReport check_feasibility(const MarketModel& model, const ContractParams& params,
                                    const EffortProfile& e, double tol) {
  if (tol < 0.0) {
    throw std::invalid_argument("feasibility tolerance must be nonnegative");
  }
  check_params(model, params);
  check_effort_domain(model, e);

  FeasibilityReport report;
  report.ir_slack.resize(model.n_agents);
  report.payment_slack.resize(model.n_principals, model.n_agents);
  for (int i = 0; i < model.n_agents; ++i) {
    report.ir_slack[i] = agent_expected_utility(model, params, e, i);
    for (int j = 0; j < model.n_principals; ++j) {
      report.payment_slack(j, i) = expected_payment(model, params, e, i, j);
    }
  }
  report.ir_ok = report.ir_slack.minCoeff() >= -tol;
  report.positivity_ok = report.payment_slack.minCoeff() >= -tol;
  return report;
}

void validate_model(const MarketModel& model, const Mat& probe_a, int probes,
                    std::uint64_t seed) {
  if (model.n_agents < 1 || model.n_principals < 1) {
    throw std::invalid_argument("model must have at least one agent and one principal");
  }
  if (!(model.effort_floor > 0.0) || !(model.effort_ceiling > model.effort_floor)) {
    throw std::invalid_argument("effort box requires 0 < floor < ceiling");
  }
  if (!model.payment_kernel || !model.value_fn) {
    throw std::invalid_argument("model evaluators must be set");
  }
  if (probe_a.rows() != model.n_principals || probe_a.cols() != model.n_agents) {
    throw std::invalid_argument("probe slope matrix must be n_principals x n_agents");
  }

  // Probe on a log-uniform grid of efforts; kernels in this domain vary over
  // orders of magnitude across the box.
  const double lf = std::log(model.effort_floor);
  const double lc = std::log(model.effort_ceiling);
  std::uint64_t state = mix_seed(seed, 0x9a0bu);
  for (int p = 0; p < probes; ++p) {
    EffortProfile e(model.n_agents);
    for (int i = 0; i < model.n_agents; ++i) {
      e[i] = std::exp(next_uniform(state, lf, lc));
    }
    for (int j = 0; j < model.n_principals; ++j) {
      if (!std::isfinite(model.value_fn(j, e))) {
        throw structure_error("value function not finite on the effort box");
      }
      for (int i = 0; i < model.n_agents; ++i) {
        const double a_ij = probe_a(j, i);
        const double f0 = model.payment_kernel(j, i, a_ij, e);
        if (!std::isfinite(f0)) {
          throw structure_error("payment kernel not finite on the effort box");
        }
        // Smoothness probe: central differences at two step sizes should
        // agree if the kernel is C^1 in both arguments near this point.
        const double ha = 1e-4 * (1.0 + std::abs(a_ij));
        auto d_a = [&](double h) {
          return (model.payment_kernel(j, i, a_ij + h, e) -
                  model.payment_kernel(j, i, a_ij + (a_ij >= h ? -h : 0.0), e)) /
                 (a_ij >= h ? 2.0 * h : h);
        };
        const double da1 = d_a(ha);
        const double da2 = d_a(ha / 2.0);
        if (!std::isfinite(da1) || !std::isfinite(da2) ||
            std::abs(da1 - da2) > 1e-2 * (1.0 + std::abs(da1))) {
          throw structure_error("payment kernel slope-derivative unstable (not C^1?)");
        }
        const double he = 1e-4 * (1.0 + std::abs(e[i]));
        if (e[i] - he > model.effort_floor && e[i] + he < model.effort_ceiling) {
          EffortProfile ep = e, em = e;
          ep[i] += he;
          em[i] -= he;
          const double de = (model.payment_kernel(j, i, a_ij, ep) -
                             model.payment_kernel(j, i, a_ij, em)) /
                            (2.0 * he);
          if (!std::isfinite(de)) {
            throw structure_error("payment kernel effort-derivative not finite");
          }
        }
      }
    }
  }
}

}  // namespace gnesim
