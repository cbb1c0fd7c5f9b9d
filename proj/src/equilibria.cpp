#include "gnesim/equilibria.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gnesim {

namespace {

Vec effort_of(const MarketModel& model, const Mat& a) {
  return solve_efforts(model, a).e_star;
}

// Everything the first-order machinery needs at one slope matrix: induced
// efforts, expected kernel payments per pair, transfer column targets g, and
// each principal's cost net of its transfers.
struct EvalState {
  Vec e;       // induced efforts
  Mat pay;     // kernel expectation per (principal, agent)
  Vec g;       // e_i - sum_j pay(j, i)
  Vec ftilde;  // sum_i pay(j, i) - value_j(e), per principal
};

EvalState eval_state(const MarketModel& model, const Mat& a) {
  EvalState s;
  s.e = effort_of(model, a);
  s.pay.resize(model.n_principals, model.n_agents);
  for (int j = 0; j < model.n_principals; ++j) {
    for (int i = 0; i < model.n_agents; ++i) {
      s.pay(j, i) = model.payment_kernel(j, i, a(j, i), s.e);
    }
  }
  s.g = s.e - s.pay.colwise().sum().transpose();
  s.ftilde.resize(model.n_principals);
  for (int j = 0; j < model.n_principals; ++j) {
    s.ftilde[j] = s.pay.row(j).sum() - model.value_fn(j, s.e);
  }
  return s;
}

// Central difference of eval_state in one slope entry; falls back to a
// second-order one-sided stencil when the lower point would leave a >= 0.
struct StateDerivative {
  Vec dg;       // dg_i / da(j, n)
  Mat dpay;     // dpay(k, i) / da(j, n)
  Vec dftilde;  // dftilde_k / da(j, n)
};

StateDerivative state_derivative(const MarketModel& model, const Mat& a, int j, int n,
                                 double fd_step) {
  const double h = fd_step * (1.0 + std::abs(a(j, n)));
  Mat ap = a;
  StateDerivative d;
  if (a(j, n) - h >= 0.0) {
    ap(j, n) = a(j, n) + h;
    const EvalState sp = eval_state(model, ap);
    ap(j, n) = a(j, n) - h;
    const EvalState sm = eval_state(model, ap);
    const double w = ap(j, n) + 2.0 * h - (a(j, n) - h);  // exact separation
    d.dg = (sp.g - sm.g) / w;
    d.dpay = (sp.pay - sm.pay) / w;
    d.dftilde = (sp.ftilde - sm.ftilde) / w;
  } else {
    const EvalState s0 = eval_state(model, a);
    ap(j, n) = a(j, n) + h;
    const EvalState s1 = eval_state(model, ap);
    ap(j, n) = a(j, n) + 2.0 * h;
    const EvalState s2 = eval_state(model, ap);
    d.dg = (4.0 * s1.g - 3.0 * s0.g - s2.g) / (2.0 * h);
    d.dpay = (4.0 * s1.pay - 3.0 * s0.pay - s2.pay) / (2.0 * h);
    d.dftilde = (4.0 * s1.ftilde - 3.0 * s0.ftilde - s2.ftilde) / (2.0 * h);
  }
  return d;
}

// Principal j's reduced cost as a function of slopes only (transfers of the
// rivals are additive constants and drop from the optimization).
double reduced_cost_in_slopes(const MarketModel& model, const Mat& a, int j) {
  const EvalState s = eval_state(model, a);
  return s.g.sum() + s.ftilde[j];
}

Vec reduced_cost_gradient(const MarketModel& model, const Mat& a, int j, double fd_step) {
  Vec grad(model.n_agents);
  for (int n = 0; n < model.n_agents; ++n) {
    const StateDerivative d = state_derivative(model, a, j, n, fd_step);
    grad[n] = d.dg.sum() + d.dftilde[j];
  }
  return grad;
}

// Projected-gradient descent with Barzilai-Borwein steps and Armijo
// backtracking on the nonnegative orthant. Returns the optimized row.
Vec inner_best_response(const MarketModel& model, Mat a, int j, const GneOptions& opts) {
  Vec x = a.row(j).transpose();
  auto cost_at = [&](const Vec& row) {
    a.row(j) = row.transpose();
    return reduced_cost_in_slopes(model, a, j);
  };
  auto grad_at = [&](const Vec& row) {
    a.row(j) = row.transpose();
    return reduced_cost_gradient(model, a, j, opts.fd_step);
  };

  double f = cost_at(x);
  Vec g = grad_at(x);
  double step = 1.0;
  Vec x_prev = x, g_prev = g;
  bool have_prev = false;

  for (int it = 0; it < opts.inner_max_iters; ++it) {
    // Projected-gradient residual: zero at a stationary point of the
    // constrained problem.
    double pg_norm = 0.0;
    for (int n = 0; n < x.size(); ++n) {
      const double comp = (x[n] <= 0.0 && g[n] > 0.0) ? 0.0 : g[n];
      pg_norm = std::max(pg_norm, std::abs(comp));
    }
    if (pg_norm <= opts.inner_tol) break;

    if (have_prev) {
      const Vec s = x - x_prev;
      const Vec y = g - g_prev;
      const double sy = s.dot(y);
      if (sy > 1e-300) {
        step = std::clamp(s.dot(s) / sy, 1e-10, 1e8);
      }
    }

    bool accepted = false;
    double trial = step;
    for (int bt = 0; bt < 80; ++bt) {
      Vec xn = (x - trial * g).cwiseMax(0.0);
      const double fn = cost_at(xn);
      const double decrease = g.dot(x - xn);
      if (fn <= f - 1e-4 * decrease) {
        x_prev = x;
        g_prev = g;
        have_prev = true;
        x = xn;
        f = fn;
        g = grad_at(x);
        accepted = true;
        break;
      }
      trial *= 0.5;
    }
    if (!accepted) break;  // step collapsed below resolution
    step = trial;
  }
  return x;
}

}  // namespace

Vec SimplexDescription::slack() const {
  return g - lower_bounds.colwise().sum().transpose();
}

bool SimplexDescription::feasible(double tol) const {
  return slack().minCoeff() >= -tol;
}

Mat SimplexDescription::centroid() const {
  const Vec s = slack();
  Mat c = lower_bounds;
  const double m = static_cast<double>(lower_bounds.rows());
  for (int i = 0; i < c.cols(); ++i) {
    c.col(i).array() += s[i] / m;
  }
  return c;
}

Vec compute_g(const MarketModel& model, const Mat& a) {
  const Vec e = effort_of(model, a);
  Vec g(model.n_agents);
  for (int i = 0; i < model.n_agents; ++i) {
    double acc = 0.0;
    for (int j = 0; j < model.n_principals; ++j) {
      acc += model.payment_kernel(j, i, a(j, i), e);
    }
    g[i] = e[i] - acc;
  }
  return g;
}

double principal_cost_sans_transfers(const MarketModel& model, const Mat& a, int principal) {
  check_principal_index(model, principal);
  const Vec e = effort_of(model, a);
  double acc = 0.0;
  for (int i = 0; i < model.n_agents; ++i) {
    acc += model.payment_kernel(principal, i, a(principal, i), e);
  }
  return acc - model.value_fn(principal, e);
}

double reduced_principal_cost(const MarketModel& model, const Mat& a, const Mat& others_c,
                              int principal) {
  check_principal_index(model, principal);
  if (others_c.rows() != model.n_principals || others_c.cols() != model.n_agents) {
    throw std::invalid_argument("others_c must be n_principals x n_agents (own row ignored)");
  }
  const Vec e = effort_of(model, a);
  const Vec g = compute_g(model, a);
  double total = 0.0;
  for (int i = 0; i < model.n_agents; ++i) {
    double rivals = 0.0;
    for (int k = 0; k < model.n_principals; ++k) {
      if (k != principal) rivals += others_c(k, i);
    }
    total += g[i] - rivals + model.payment_kernel(principal, i, a(principal, i), e);
  }
  return total - model.value_fn(principal, e);
}

Vec ir_constraints(const MarketModel& model, const ContractParams& params) {
  check_params(model, params);
  const Vec e = effort_of(model, params.a);
  Vec gt(model.n_agents);
  for (int i = 0; i < model.n_agents; ++i) {
    gt[i] = -agent_expected_utility(model, params, e, i);
  }
  return gt;
}

Mat positivity_constraints(const MarketModel& model, const ContractParams& params) {
  check_params(model, params);
  const Vec e = effort_of(model, params.a);
  Mat ht(model.n_principals, model.n_agents);
  for (int j = 0; j < model.n_principals; ++j) {
    for (int i = 0; i < model.n_agents; ++i) {
      ht(j, i) = -expected_payment(model, params, e, i, j);
    }
  }
  return ht;
}

SimplexDescription simplex_for_slopes(const MarketModel& model, const Mat& a) {
  SimplexDescription desc;
  desc.a_ref = a;
  const Vec e = effort_of(model, a);
  desc.g = compute_g(model, a);
  desc.lower_bounds.resize(model.n_principals, model.n_agents);
  for (int j = 0; j < model.n_principals; ++j) {
    for (int i = 0; i < model.n_agents; ++i) {
      desc.lower_bounds(j, i) = -model.payment_kernel(j, i, a(j, i), e);
    }
  }
  if (!desc.feasible()) {
    const Vec s = desc.slack();
    std::ostringstream os;
    os << "transfer polytope is empty; per-agent slack:";
    for (int i = 0; i < s.size(); ++i) os << " " << s[i];
    throw infeasible_error(os.str());
  }
  return desc;
}

SimplexDescription simplex_of_gne(const MarketModel& model, const GneCandidate& gne) {
  if (!gne.converged) {
    throw std::invalid_argument("simplex_of_gne requires a converged candidate");
  }
  return simplex_for_slopes(model, gne.params.a);
}

std::vector<Mat> sample_simplex(const SimplexDescription& desc, int k, std::uint64_t seed) {
  if (k < 1) {
    throw std::invalid_argument("sample count must be positive");
  }
  if (!desc.feasible()) {
    throw infeasible_error("cannot sample from an empty transfer polytope");
  }
  const int m = static_cast<int>(desc.lower_bounds.rows());
  const int n = static_cast<int>(desc.lower_bounds.cols());
  const Vec slack = desc.slack();

  std::vector<Mat> out;
  out.reserve(static_cast<size_t>(k));
  for (int s = 0; s < k; ++s) {
    Mat c(m, n);
    for (int i = 0; i < n; ++i) {
      std::uint64_t state =
          mix_seed(seed, static_cast<std::uint64_t>(s) * static_cast<std::uint64_t>(n) +
                             static_cast<std::uint64_t>(i));
      // Exponential spacings: normalized Exp(1) draws are uniform on the
      // standard simplex.
      Vec spacing(m);
      double total = 0.0;
      for (int j = 0; j < m; ++j) {
        spacing[j] = -std::log(1.0 - next_u01(state));
        total += spacing[j];
      }
      for (int j = 0; j < m; ++j) {
        c(j, i) = desc.lower_bounds(j, i) + slack[i] * (spacing[j] / total);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

GneCandidate solve_gne(const MarketModel& model, const Mat& init_a, const GneOptions& opts) {
  if (init_a.rows() != model.n_principals || init_a.cols() != model.n_agents) {
    throw std::invalid_argument("initial slope matrix must be n_principals x n_agents");
  }
  if ((init_a.array() < 0.0).any() || !init_a.allFinite()) {
    throw std::domain_error("initial slopes must be finite and nonnegative");
  }

  Mat a = init_a;
  bool settled = false;
  int iters = 0;
  for (int outer = 1; outer <= opts.max_iters; ++outer) {
    const Mat prev = a;
    if (opts.jacobi) {
      Mat next = a;
      for (int j = 0; j < model.n_principals; ++j) {
        next.row(j) = inner_best_response(model, prev, j, opts).transpose();
      }
      a = next;
    } else {
      for (int j = 0; j < model.n_principals; ++j) {
        a.row(j) = inner_best_response(model, a, j, opts).transpose();
      }
    }
    iters = outer;
    if ((a - prev).cwiseAbs().maxCoeff() < opts.tol) {
      settled = true;
      break;
    }
  }
  if (settled) {
    // One polishing sweep so every principal's block is stationary against
    // the final rivals, not the mid-sweep ones.
    for (int j = 0; j < model.n_principals; ++j) {
      a.row(j) = inner_best_response(model, a, j, opts).transpose();
    }
  }

  GneCandidate cand;
  cand.br_iterations = iters;
  cand.params.a = a;
  const SimplexDescription desc = simplex_for_slopes(model, a);
  cand.params.c = desc.centroid();
  cand.e_star = effort_of(model, a);
  cand.deviation_certificate = max_deviation_improvement(
      model, cand.params, opts.deviation_samples, opts.seed, opts.deviation_radius);
  cand.converged = settled && cand.deviation_certificate <= opts.verify_tol;
  return cand;
}

bool check_ir_binding(const MarketModel& model, const ContractParams& params, double tol) {
  check_params(model, params);
  const Vec e = effort_of(model, params.a);
  for (int i = 0; i < model.n_agents; ++i) {
    if (std::abs(agent_expected_utility(model, params, e, i)) > tol) {
      return false;
    }
  }
  return true;
}

namespace {

// Equilibrium-face membership: IR binding within tol, payments nonnegative
// within tol.
bool on_equilibrium_face(const MarketModel& model, const ContractParams& params,
                         double tol) {
  const Vec e = effort_of(model, params.a);
  const FeasibilityReport rep = check_feasibility(model, params, e, tol);
  if (!rep.positivity_ok) return false;
  return rep.ir_slack.cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

double ve_inner_product(const MarketModel& model, const ContractParams& x,
                        const ContractParams& y, double face_tol) {
  check_params(model, x);
  check_params(model, y);
  if (!on_equilibrium_face(model, x, face_tol)) {
    throw std::domain_error("ve_inner_product: x leaves the equilibrium face");
  }
  if (!on_equilibrium_face(model, y, face_tol)) {
    throw std::domain_error("ve_inner_product: y leaves the equilibrium face");
  }

  double total = 0.0;
  // Transfer entries of the own-block gradients are exactly one.
  total += (y.c - x.c).sum();
  const GneOptions fd_defaults;
  for (int j = 0; j < model.n_principals; ++j) {
    for (int n = 0; n < model.n_agents; ++n) {
      const double diff = y.a(j, n) - x.a(j, n);
      if (diff == 0.0) continue;
      const StateDerivative d = state_derivative(model, x.a, j, n, fd_defaults.fd_step);
      total += d.dftilde[j] * diff;
    }
  }
  return total;
}

bool check_ve_on_simplex(const MarketModel& model, const SimplexDescription& desc, int k,
                         std::uint64_t seed, double tol) {
  try {
    const std::vector<Mat> xs = sample_simplex(desc, k, mix_seed(seed, 0x5a11));
    const std::vector<Mat> ys = sample_simplex(desc, k, mix_seed(seed, 0xb0b1));
    for (int s = 0; s < k; ++s) {
      const ContractParams x{xs[static_cast<size_t>(s)], desc.a_ref};
      const ContractParams y{ys[static_cast<size_t>(s)], desc.a_ref};
      if (std::abs(ve_inner_product(model, x, y)) > tol) {
        return false;
      }
    }
    return true;
  } catch (const std::exception&) {
    // Sampled points left the equilibrium face or the polytope was empty.
    return false;
  }
}

KKTResult solve_kkt(const MarketModel& model, const ContractParams& params,
                    double active_tol) {
  check_params(model, params);
  const int n = model.n_agents;
  const int m = model.n_principals;
  const Vec gt = ir_constraints(model, params);
  const Mat ht = positivity_constraints(model, params);

  std::vector<int> active_ir;
  for (int i = 0; i < n; ++i) {
    if (gt[i] >= -active_tol) active_ir.push_back(i);
  }
  std::vector<std::pair<int, int>> active_pos;  // (principal, agent)
  for (int k = 0; k < m; ++k) {
    for (int i = 0; i < n; ++i) {
      if (ht(k, i) >= -active_tol) active_pos.emplace_back(k, i);
    }
  }
  const int n_cols = static_cast<int>(active_ir.size() + active_pos.size());

  // Per-direction derivatives of the shared quantities, reused by every
  // principal's block.
  const GneOptions fd_defaults;
  std::vector<std::vector<StateDerivative>> deriv(static_cast<size_t>(m));
  for (int j = 0; j < m; ++j) {
    deriv[static_cast<size_t>(j)].reserve(static_cast<size_t>(n));
    for (int d = 0; d < n; ++d) {
      deriv[static_cast<size_t>(j)].push_back(
          state_derivative(model, params.a, j, d, fd_defaults.fd_step));
    }
  }

  // Block of 2n stationarity rows for principal j: transfers first, slopes
  // second. Returns (A, b) with A * multipliers ~ b.
  auto principal_block = [&](int j) {
    Mat A = Mat::Zero(2 * n, std::max(n_cols, 1));
    Vec b(2 * n);
    for (int i = 0; i < n; ++i) b[i] = -1.0;  // d cost / d c_ji = 1
    for (int d = 0; d < n; ++d) {
      b[n + d] = -deriv[static_cast<size_t>(j)][static_cast<size_t>(d)].dftilde[j];
    }
    int col = 0;
    for (int i : active_ir) {
      A(i, col) = -1.0;
      for (int d = 0; d < n; ++d) {
        A(n + d, col) = deriv[static_cast<size_t>(j)][static_cast<size_t>(d)].dg[i];
      }
      ++col;
    }
    for (const auto& [k, i] : active_pos) {
      if (k == j) A(i, col) = -1.0;
      for (int d = 0; d < n; ++d) {
        A(n + d, col) = -deriv[static_cast<size_t>(j)][static_cast<size_t>(d)].dpay(k, i);
      }
      ++col;
    }
    return std::make_pair(A, b);
  };

  KKTResult result;
  result.per_principal_lambda = Mat::Zero(m, n);
  result.nu = Mat::Zero(m, n);
  result.lambda = Vec::Zero(n);

  Mat joint_A = Mat::Zero(2 * n * m, std::max(n_cols, 1));
  Vec joint_b(2 * n * m);
  for (int j = 0; j < m; ++j) {
    const auto [A, b] = principal_block(j);
    joint_A.middleRows(2 * n * j, 2 * n) = A;
    joint_b.segment(2 * n * j, 2 * n) = b;
    if (n_cols > 0) {
      Eigen::CompleteOrthogonalDecomposition<Mat> cod(A);
      if (cod.rank() < n_cols) result.degenerate = true;
      const Vec x = cod.solve(b);
      for (size_t idx = 0; idx < active_ir.size(); ++idx) {
        result.per_principal_lambda(j, active_ir[idx]) = x[static_cast<Eigen::Index>(idx)];
      }
    }
  }

  if (n_cols > 0) {
    Eigen::CompleteOrthogonalDecomposition<Mat> cod(joint_A);
    if (cod.rank() < n_cols) result.degenerate = true;
    const Vec x = cod.solve(joint_b);
    for (size_t idx = 0; idx < active_ir.size(); ++idx) {
      result.lambda[active_ir[idx]] = x[static_cast<Eigen::Index>(idx)];
    }
    for (size_t idx = 0; idx < active_pos.size(); ++idx) {
      const auto& [k, i] = active_pos[idx];
      result.nu(k, i) = x[static_cast<Eigen::Index>(active_ir.size() + idx)];
    }
    const Vec res = joint_A * x - joint_b;
    result.stationarity_residual = res.norm();
    double cres = 0.0;
    for (int j = 0; j < m; ++j) {
      cres += res.segment(2 * n * j, n).squaredNorm();
    }
    result.c_block_residual = std::sqrt(cres);
  } else {
    result.stationarity_residual = joint_b.norm();
    double cres = 0.0;
    for (int j = 0; j < m; ++j) {
      cres += joint_b.segment(2 * n * j, n).squaredNorm();
    }
    result.c_block_residual = std::sqrt(cres);
  }
  return result;
}

bool check_noe(const MarketModel& model, const ContractParams& params, const Vec& gamma,
               double tol) {
  if (gamma.size() != model.n_principals) {
    throw std::invalid_argument("gamma must have one weight per principal");
  }
  if ((gamma.array() <= 0.0).any()) {
    throw std::invalid_argument("gamma weights must be positive");
  }
  const KKTResult kkt = solve_kkt(model, params);
  for (int j = 1; j < model.n_principals; ++j) {
    const Vec lhs = gamma[0] * kkt.per_principal_lambda.row(0).transpose();
    const Vec rhs = gamma[j] * kkt.per_principal_lambda.row(j).transpose();
    if ((lhs - rhs).cwiseAbs().maxCoeff() > tol) {
      return false;
    }
  }
  return true;
}

double max_deviation_improvement(const MarketModel& model, const ContractParams& params,
                                 int samples_per_principal, std::uint64_t seed,
                                 double radius) {
  check_params(model, params);
  if (samples_per_principal < 1) {
    throw std::invalid_argument("need at least one deviation sample per principal");
  }
  const int n = model.n_agents;
  const int m = model.n_principals;
  const Vec e_base = effort_of(model, params.a);
  const double a_scale = params.a.maxCoeff();

  double best = 0.0;  // the null deviation is always available
  for (int j = 0; j < m; ++j) {
    const double base_cost = principal_expected_cost(model, params, e_base, j);
    for (int s = 0; s < samples_per_principal; ++s) {
      std::uint64_t state = mix_seed(
          seed, static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(samples_per_principal) +
                    static_cast<std::uint64_t>(s));
      Mat a_dev = params.a;
      if (s == 1) {
        a_dev.row(j).setZero();  // full dropout
      } else if (s > 1) {
        const double shrink = (s % 4 == 0) ? 0.1 : 1.0;  // mix tight and wide moves
        for (int i = 0; i < n; ++i) {
          if (s % 7 == 2) {
            a_dev(j, i) = next_uniform(state, 0.0, 2.0 * a_scale + 1.0);
          } else {
            const double width = radius * shrink * (1.0 + std::abs(a_dev(j, i)));
            a_dev(j, i) = std::max(0.0, a_dev(j, i) + next_uniform(state, -width, width));
          }
        }
      }

      Vec e_dev;
      try {
        e_dev = effort_of(model, a_dev);
      } catch (const std::exception&) {
        continue;  // deviation broke the second-stage structure
      }

      // Rival constraints are shared: the move is inadmissible if it drives
      // any rival payment negative.
      bool rivals_ok = true;
      for (int k = 0; k < m && rivals_ok; ++k) {
        if (k == j) continue;
        for (int i = 0; i < n; ++i) {
          const double pk =
              params.c(k, i) + model.payment_kernel(k, i, params.a(k, i), e_dev);
          if (pk < -1e-12) {
            rivals_ok = false;
            break;
          }
        }
      }
      if (!rivals_ok) continue;

      // Optimal feasible transfers given the deviated slopes: push each c
      // entry to the larger of its positivity floor and its IR floor.
      double dev_cost = -model.value_fn(j, e_dev);
      for (int i = 0; i < n; ++i) {
        const double own_pay = model.payment_kernel(j, i, a_dev(j, i), e_dev);
        double rivals_total = 0.0;
        for (int k = 0; k < m; ++k) {
          if (k == j) continue;
          rivals_total += params.c(k, i) + model.payment_kernel(k, i, params.a(k, i), e_dev);
        }
        const double floor_pos = -own_pay;
        const double floor_ir = e_dev[i] - rivals_total - own_pay;
        dev_cost += std::max(floor_pos, floor_ir) + own_pay;
      }
      best = std::max(best, base_cost - dev_cost);
    }
  }
  return best;
}

}  // namespace gnesim
