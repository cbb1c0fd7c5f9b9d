#include "gnesim/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gnesim {

namespace {

void check_slopes(const MarketModel& model, const Mat& a) {
  if (a.rows() != model.n_principals || a.cols() != model.n_agents) {
    throw std::invalid_argument("slope matrix must be n_principals x n_agents");
  }
  if (!a.allFinite()) {
    throw std::domain_error("slopes must be finite");
  }
  if ((a.array() < 0.0).any()) {
    throw std::domain_error("slopes must be nonnegative");
  }
}

// Own-payment sum of agent i at effort t, rivals fixed at `base`.
double own_payment_sum(const MarketModel& model, const Mat& a, EffortProfile& base, int i,
                       double t) {
  const double saved = base[i];
  base[i] = t;
  double acc = 0.0;
  for (int j = 0; j < model.n_principals; ++j) {
    acc += model.payment_kernel(j, i, a(j, i), base);
  }
  base[i] = saved;
  return acc;
}

struct AgentResult {
  double e = 0.0;
  double residual = 0.0;
  BoundaryFlag flag = BoundaryFlag::interior;
};

// Closed form for kernels with the 1/e variance family: the own-effort
// objective is -A/e - e with A the slope column sum, so e* = sqrt(A).
AgentResult closed_form_effort(const MarketModel& model, const Mat& a, int i) {
  AgentResult r;
  const double slope_sum = a.col(i).sum();
  const double raw = std::sqrt(slope_sum);
  if (raw <= model.effort_floor) {
    r.e = model.effort_floor;
    r.flag = BoundaryFlag::at_floor;
    r.residual = 0.0;
  } else if (raw >= model.effort_ceiling) {
    r.e = model.effort_ceiling;
    r.flag = BoundaryFlag::at_ceiling;
    r.residual = 0.0;
  } else {
    r.e = raw;
    r.flag = BoundaryFlag::interior;
    r.residual = std::abs(slope_sum / (r.e * r.e) - 1.0);
  }
  return r;
}

double foc_step(double t) { return 1e-5 * (1.0 + std::abs(t)); }

// Structure probes over a geometric grid: concavity of the own objective and
// separability from rival efforts. Both are required for a dominant strategy
// to exist and be found by one-dimensional search.
void check_structure(const MarketModel& model, const Mat& a, int i,
                     const Stage2Options& opts) {
  const double lf = std::log(model.effort_floor);
  const double lc = std::log(model.effort_ceiling);
  EffortProfile base =
      EffortProfile::Constant(model.n_agents, std::clamp(1.0, model.effort_floor,
                                                         model.effort_ceiling));
  auto psi = [&](double t) { return own_payment_sum(model, a, base, i, t) - t; };

  for (int p = 0; p <= opts.probes; ++p) {
    const double t = std::exp(lf + (lc - lf) * (p + 0.5) / (opts.probes + 1));
    const double h = 1e-3 * (1.0 + std::abs(t));
    if (t - h <= model.effort_floor || t + h >= model.effort_ceiling) continue;
    const double mid = psi(t);
    const double second = (psi(t + h) - 2.0 * mid + psi(t - h)) / (h * h);
    if (second > opts.concavity_tol * (1.0 + std::abs(mid))) {
      throw structure_error(
          "own-effort objective is not concave: no unique dominant strategy guaranteed");
    }
    // Cross partial of the own-payment sum against one rival coordinate.
    for (int k = 0; k < model.n_agents && model.n_agents > 1; ++k) {
      if (k == i) continue;
      const double hk = 1e-3 * (1.0 + std::abs(base[k]));
      if (base[k] - hk <= model.effort_floor || base[k] + hk >= model.effort_ceiling) break;
      const double saved = base[k];
      base[k] = saved + hk;
      const double fpp = own_payment_sum(model, a, base, i, t + h);
      const double fpm = own_payment_sum(model, a, base, i, t - h);
      base[k] = saved - hk;
      const double fmp = own_payment_sum(model, a, base, i, t + h);
      const double fmm = own_payment_sum(model, a, base, i, t - h);
      base[k] = saved;
      const double scale = std::max({1.0, std::abs(fpp), std::abs(fmm)});
      const double cross = (fpp - fpm - fmp + fmm) / (4.0 * h * hk);
      if (std::abs(cross) > opts.separability_tol * scale) {
        throw structure_error(
            "own-effort objective couples to rival efforts: no dominant strategy");
      }
      break;  // one rival direction per probe point is enough
    }
  }
}

AgentResult numeric_effort(const MarketModel& model, const Mat& a, int i,
                           const Stage2Options& opts) {
  EffortProfile base =
      EffortProfile::Constant(model.n_agents, std::clamp(1.0, model.effort_floor,
                                                         model.effort_ceiling));
  auto psi = [&](double t) { return own_payment_sum(model, a, base, i, t) - t; };
  auto foc = [&](double t) {
    const double h = foc_step(t);
    const double lo = std::max(t - h, model.effort_floor);
    const double hi = std::min(t + h, model.effort_ceiling);
    return (own_payment_sum(model, a, base, i, hi) - own_payment_sum(model, a, base, i, lo)) /
               (hi - lo) -
           1.0;
  };

  // Golden-section bracket shrink; the objective is concave per the
  // structure probe, so this isolates the maximizer.
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = model.effort_floor;
  double hi = model.effort_ceiling;
  double x1 = hi - invphi * (hi - lo);
  double x2 = lo + invphi * (hi - lo);
  double f1 = psi(x1);
  double f2 = psi(x2);
  // Stop at ~1e-8 width: the FOC bisection below does the fine work.
  while (hi - lo > 1e-8 * (1.0 + std::abs(lo))) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - invphi * (hi - lo);
      f1 = psi(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + invphi * (hi - lo);
      f2 = psi(x2);
    }
  }
  double t = 0.5 * (lo + hi);

  AgentResult r;
  // Boundary handling: ties break toward the floor.
  if (t - model.effort_floor <= 16.0 * (1.0 + model.effort_floor) * 1e-8 &&
      foc(model.effort_floor + foc_step(model.effort_floor)) <= 0.0) {
    r.e = model.effort_floor;
    r.flag = BoundaryFlag::at_floor;
    r.residual = 0.0;
    return r;
  }
  if (model.effort_ceiling - t <= 16.0 * (1.0 + model.effort_ceiling) * 1e-8 &&
      foc(model.effort_ceiling - foc_step(model.effort_ceiling)) >= 0.0) {
    r.e = model.effort_ceiling;
    r.flag = BoundaryFlag::at_ceiling;
    r.residual = 0.0;
    return r;
  }

  // Bisection on the first-order condition around the golden-section point.
  double blo = std::max(model.effort_floor, t - 1e-4 * (1.0 + std::abs(t)));
  double bhi = std::min(model.effort_ceiling, t + 1e-4 * (1.0 + std::abs(t)));
  double flo = foc(blo);
  double fhi = foc(bhi);
  // Widen until the FOC changes sign (it must, near a concave interior max).
  for (int grow = 0; grow < 60 && flo * fhi > 0.0; ++grow) {
    const double w = bhi - blo;
    blo = std::max(model.effort_floor, blo - w);
    bhi = std::min(model.effort_ceiling, bhi + w);
    flo = foc(blo);
    fhi = foc(bhi);
    if (blo <= model.effort_floor && bhi >= model.effort_ceiling) break;
  }
  if (flo * fhi <= 0.0) {
    for (int it = 0; it < 200 && bhi - blo > opts.tol; ++it) {
      const double mid = 0.5 * (blo + bhi);
      const double fm = foc(mid);
      if (flo * fm <= 0.0) {
        bhi = mid;
        fhi = fm;
      } else {
        blo = mid;
        flo = fm;
      }
    }
    t = 0.5 * (blo + bhi);
  }

  r.e = t;
  r.flag = BoundaryFlag::interior;
  r.residual = std::abs(foc(t));
  return r;
}

}  // namespace

Stage2Solution solve_efforts(const MarketModel& model, const Mat& a,
                             const Stage2Options& opts) {
  check_slopes(model, a);
  Stage2Solution sol;
  sol.e_star.resize(model.n_agents);
  sol.per_agent_residual.resize(model.n_agents);
  sol.boundary_flags.resize(model.n_agents);

  for (int i = 0; i < model.n_agents; ++i) {
    AgentResult r;
    if (model.effort_closed_form == EffortClosedForm::sqrt_slope_sum) {
      r = closed_form_effort(model, a, i);
    } else {
      check_structure(model, a, i, opts);
      r = numeric_effort(model, a, i, opts);
    }
    sol.e_star[i] = r.e;
    sol.per_agent_residual[i] = r.residual;
    sol.boundary_flags[i] = r.flag;
  }
  return sol;
}

Stage2Solution solve_efforts(const MarketModel& model, const ContractParams& params,
                             const Stage2Options& opts) {
  check_params(model, params);
  return solve_efforts(model, params.a, opts);
}

bool verify_dominance(const MarketModel& model, const Mat& a, const Stage2Solution& sol,
                      int trials, std::uint64_t seed, double tol) {
  check_slopes(model, a);
  if (trials < 1) {
    throw std::invalid_argument("verify_dominance needs at least one trial");
  }
  ContractParams params;
  params.c = Mat::Zero(model.n_principals, model.n_agents);
  params.a = a;

  for (int t = 0; t < trials; ++t) {
    std::uint64_t state = mix_seed(seed, static_cast<std::uint64_t>(t));
    const int i = static_cast<int>(splitmix64(state) % static_cast<std::uint64_t>(model.n_agents));
    EffortProfile e(model.n_agents);
    for (int k = 0; k < model.n_agents; ++k) {
      e[k] = next_uniform(state, model.effort_floor, model.effort_ceiling);
    }
    double deviation = next_uniform(state, model.effort_floor, model.effort_ceiling);
    if (std::abs(deviation - sol.e_star[i]) < 1e-12 * (1.0 + sol.e_star[i])) {
      deviation = std::min(model.effort_ceiling, deviation + 0.5 * (1.0 + deviation));
    }
    EffortProfile at_star = e;
    at_star[i] = sol.e_star[i];
    EffortProfile at_dev = e;
    at_dev[i] = deviation;
    const double u_star = agent_expected_utility(model, params, at_star, i);
    const double u_dev = agent_expected_utility(model, params, at_dev, i);
    if (u_star < u_dev - tol * (1.0 + std::abs(u_star))) {
      return false;
    }
  }
  return true;
}

bool c_independence_check(const MarketModel& model, const Mat& a, const Mat& c1,
                          const Mat& c2) {
  const Stage2Solution s1 = solve_efforts(model, ContractParams{c1, a});
  const Stage2Solution s2 = solve_efforts(model, ContractParams{c2, a});
  if (s1.e_star.size() != s2.e_star.size()) return false;
  const auto bytes = static_cast<size_t>(s1.e_star.size()) * sizeof(double);
  if (std::memcmp(s1.e_star.data(), s2.e_star.data(), bytes) != 0) return false;
  if (std::memcmp(s1.per_agent_residual.data(), s2.per_agent_residual.data(), bytes) != 0) {
    return false;
  }
  return s1.boundary_flags == s2.boundary_flags;
}

}  // namespace gnesim
