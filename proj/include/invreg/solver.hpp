#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "invreg/problem.hpp"

namespace invreg {

/// Parameter choice rule alpha = max(alpha0 * delta^2, delta^2 / c0); satisfies
/// alpha -> 0 and delta^2 / alpha <= c0 as delta -> 0.
inline double choose_alpha(double delta, const RegularizationWeights& w) {
  w.validate();
  require(delta >= 0.0, "choose_alpha: delta must be nonnegative");
  if (delta == 0.0)
    throw std::invalid_argument("exact data: regularization parameter choice undefined");
  return std::max(w.alpha0 * delta * delta, delta * delta / w.c0);
}

/// T_alpha(x, u_hat; y) = Q_E(x, u_hat; y) + alpha * R(x, u_hat).
inline double assemble_cost(const ProblemInstance& P, std::span<const double> x,
                            std::span<const double> u_hat, const ObservationVector& y,
                            double alpha) {
  const double q = P.misfit(x, u_hat, y);
  const double cost = q + alpha * P.regularizer(x, u_hat);
  if (!std::isfinite(cost)) throw std::runtime_error("numerical blow-up");
  return cost;
}

namespace detail {

/// Two-sided log-sum-exp overestimate of ||v||_inf with sharpness beta;
/// smooth, and always >= max_j |v_j|.
inline double smooth_max(std::span<const double> v, double beta) {
  if (v.empty()) return 0.0;
  double m = 0.0;
  for (double a : v) m = std::max(m, beta * std::abs(a));
  double s = 0.0;
  for (double a : v) s += std::exp(beta * a - m) + std::exp(-beta * a - m);
  return (m + std::log(s)) / beta;
}

inline void smooth_max_gradient(std::span<const double> v, double beta,
                                std::span<double> out) {
  double m = 0.0;
  for (double a : v) m = std::max(m, beta * std::abs(a));
  double s = 0.0;
  for (double a : v) s += std::exp(beta * a - m) + std::exp(-beta * a - m);
  for (std::size_t j = 0; j < v.size(); ++j)
    out[j] = (std::exp(beta * v[j] - m) - std::exp(-beta * v[j] - m)) / s;
}

}  // namespace detail

/// Projected-gradient minimization of T_alpha over the admissible set,
/// alternating one step in the parameter block and one in the kernel-state
/// block per outer iteration. The two inequality constraints
/// (||C(u_hat)||_inf <= tau*delta and R~ <= rho) are handled by a quadratic
/// penalty with geometrically growing weight; the infinity norm is smoothed
/// by log-sum-exp so gradients stay defined.
inline SolverResult minimize(const ProblemInstance& P, const ObservationVector& ydelta,
                             double alpha, const AdmissibleSetSpec& spec,
                             const SolverConfig& config) {
  require(alpha > 0.0, "minimize: alpha must be positive");
  spec.validate();
  config.validate();
  ydelta.validate();

  const std::size_t nx = P.parameter_size(), nu = P.state_size();
  const std::vector<double> lift = P.data_lift(ydelta);
  require(lift.size() == nu, "minimize: data lift has wrong size");

  const double tau_delta = spec.tau * ydelta.noise_level;
  const double beta =
      tau_delta > 0.0 ? std::max(100.0 / tau_delta, 1e3) : 1e15;
  const bool reduced = P.image_is_full_space();
  const bool box = P.constraint_is_box();

  std::vector<double> x = P.initial_parameters();
  require(x.size() == nx, "minimize: initial parameter size mismatch");
  P.project_parameters(x, spec.rho);
  std::vector<double> u(nu, 0.0), total(nu);

  auto observe = [&](std::span<const double> uh) {
    if (reduced) return P.kernel_observation(uh);
    std::vector<double> t(lift);
    for (std::size_t i = 0; i < nu; ++i) t[i] += uh[i];
    std::vector<double> c = P.kernel_observation(t);
    for (std::size_t j = 0; j < c.size(); ++j) c[j] -= ydelta.values[j];
    return c;
  };

  double weight = config.penalty.initial_weight;

  auto penalized = [&](std::span<const double> xv, std::span<const double> uv) {
    for (std::size_t i = 0; i < nu; ++i) total[i] = uv[i] + lift[i];
    double val = P.misfit_total(xv, total) + alpha * P.regularizer(xv, uv);
    const std::vector<double> c = observe(uv);
    const double viol_d = std::max(0.0, detail::smooth_max(c, beta) - tau_delta);
    val += weight * viol_d * viol_d;
    if (!box) {
      const double viol_r = std::max(0.0, P.constraint_functional(xv, uv) - spec.rho);
      val += weight * viol_r * viol_r;
    }
    val += weight * P.membership_penalty(uv);
    return val;
  };

  std::vector<double> gx(nx), gu(nu), gx2(nx), gu2(nu);
  auto gradient_eval = [&](std::span<const double> xv, std::span<const double> uv) {
    std::fill(gx.begin(), gx.end(), 0.0);
    std::fill(gu.begin(), gu.end(), 0.0);
    for (std::size_t i = 0; i < nu; ++i) total[i] = uv[i] + lift[i];
    P.misfit_total_gradient(xv, total, gx, gu);
    std::fill(gx2.begin(), gx2.end(), 0.0);
    std::fill(gu2.begin(), gu2.end(), 0.0);
    P.regularizer_gradient(xv, uv, gx2, gu2);
    axpy(alpha, gx2, std::span<double>(gx));
    axpy(alpha, gu2, std::span<double>(gu));

    const std::vector<double> c = observe(uv);
    const double viol_d = std::max(0.0, detail::smooth_max(c, beta) - tau_delta);
    if (viol_d > 0.0) {
      std::vector<double> sm(c.size());
      detail::smooth_max_gradient(c, beta, sm);
      for (double& s : sm) s *= 2.0 * weight * viol_d;
      P.kernel_observation_adjoint(sm, gu);
    }
    if (!box) {
      const double viol_r = std::max(0.0, P.constraint_functional(xv, uv) - spec.rho);
      if (viol_r > 0.0) {
        std::fill(gx2.begin(), gx2.end(), 0.0);
        P.constraint_subgradient(xv, uv, gx2);
        axpy(2.0 * weight * viol_r, gx2, std::span<double>(gx));
      }
    }
    std::fill(gu2.begin(), gu2.end(), 0.0);
    P.membership_penalty_gradient(uv, gu2);
    axpy(weight, gu2, std::span<double>(gu));
    if (!all_finite(gx) || !all_finite(gu))
      throw std::runtime_error("minimize: NaN in gradient");
  };

  auto feasible_now = [&](double& disc_out, double& rt_out) {
    const std::vector<double> c = observe(u);
    disc_out = max_abs(c);
    rt_out = P.constraint_functional(x, u);
    const double slack_d = 1.05 * tau_delta + 1e-12 * std::max(1.0, tau_delta);
    const double slack_r = 1.05 * spec.rho + 1e-12 * std::max(1.0, std::abs(spec.rho));
    return disc_out <= slack_d && rt_out <= slack_r;
  };

  SolverResult res;
  double step_x = config.initial_step, step_u = config.initial_step;
  const int backtracks = config.step_rule == StepRule::backtracking ? 40 : 1;
  std::vector<double> xt(nx), ut(nu);
  bool feasible = false;
  double disc = 0.0, rt = 0.0;

  for (int stage = 0; stage < config.penalty.max_stages; ++stage) {
    res.stage_starts.push_back(int(res.cost_trace.size()));
    double cur = penalized(x, u);
    if (!std::isfinite(cur)) throw std::runtime_error("numerical blow-up");
    int stall = 0;
    for (int it = 0; it < config.max_iterations; ++it) {
      gradient_eval(x, u);

      // parameter half-step
      bool moved = false;
      for (int t = 0; t < backtracks; ++t) {
        xt.assign(x.begin(), x.end());
        axpy(-step_x, gx, std::span<double>(xt));
        P.project_parameters(xt, spec.rho);
        const double trial = penalized(xt, u);
        if (trial <= cur) {
          x.swap(xt);
          cur = trial;
          step_x *= 1.5;
          moved = true;
          break;
        }
        step_x *= 0.5;
      }

      // state half-step (gradient at the updated x)
      if (moved) gradient_eval(x, u);
      for (int t = 0; t < backtracks; ++t) {
        ut.assign(u.begin(), u.end());
        axpy(-step_u, gu, std::span<double>(ut));
        const double trial = penalized(x, ut);
        if (trial <= cur) {
          u.swap(ut);
          cur = trial;
          step_u *= 1.5;
          moved = true;
          break;
        }
        step_u *= 0.5;
      }

      const double prev = res.cost_trace.empty() ? cur : res.cost_trace.back();
      res.cost_trace.push_back(cur);
      ++res.iterations;
      const bool tiny_decrease =
          it > 0 && (prev - cur) <= config.gradient_tolerance * std::max(1.0, std::abs(cur));
      stall = (tiny_decrease || !moved) ? stall + 1 : 0;
      if (stall >= 10) break;
    }
    feasible = feasible_now(disc, rt);
    if (feasible) break;
    weight *= config.penalty.growth;
  }

  res.parameters = std::move(x);
  res.kernel_state = std::move(u);
  res.discrepancy_value = disc;
  res.constraint_value = rt;
  res.constraint_satisfied = feasible;
  res.final_cost = assemble_cost(P, res.parameters, res.kernel_state, ydelta, alpha);
  res.b_norm = P.b_norm(res.parameters, res.kernel_state);
  if (!feasible)
    res.diagnostic = "no feasible point after " +
                     std::to_string(config.penalty.max_stages) +
                     " penalty stages (discrepancy " + format_double(disc) + " vs " +
                     format_double(tau_delta) + ", constraint " + format_double(rt) +
                     " vs " + format_double(spec.rho) + ")";
  return res;
}

struct DataContinuityCheck {
  double lhs = 0.0;
  double bound = 0.0;
  bool holds = false;
};

/// Verifies the Lipschitz-type data-continuity estimate
///   |Q_E(x,u;z1) - Q_E(x,u;z2)| <= sum_i (sqrt(2 Q_E(x,u;z2)) + c_i S / 2) c_i S
/// with S = ||z1 - z2||_inf and c_i an upper bound of the lift-operator norm
/// of residual block i, assembled from the canonical data basis vectors.
inline DataContinuityCheck check_data_continuity(const ProblemInstance& P,
                                                 std::span<const double> x,
                                                 std::span<const double> u_hat,
                                                 const ObservationVector& z1,
                                                 const ObservationVector& z2) {
  require(z1.same_structure(z2), "check_data_continuity: mismatched data structure");
  const double S = discrepancy(z1, z2);
  const double q2 = P.misfit(x, u_hat, z2);
  const double q1 = P.misfit(x, u_hat, z1);

  ObservationVector basis = z1;
  std::vector<double> c;
  for (std::size_t j = 0; j < z1.size(); ++j) {
    std::fill(basis.values.begin(), basis.values.end(), 0.0);
    basis.values[j] = 1.0;
    const std::vector<double> norms = P.lift_residual_norms(x, u_hat, basis);
    if (c.empty()) c.assign(norms.size(), 0.0);
    for (std::size_t i = 0; i < norms.size(); ++i) c[i] += norms[i];
  }

  DataContinuityCheck out;
  out.lhs = std::abs(q1 - q2);
  for (double ci : c)
    out.bound += (std::sqrt(2.0) * std::sqrt(q2) + 0.5 * ci * S) * (ci * S);
  out.holds = out.lhs <= out.bound + 1e-12 * std::max(1.0, out.lhs);
  return out;
}

}  // namespace invreg
