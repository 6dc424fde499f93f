#pragma once

#include "invreg/problem.hpp"
#include "invreg/solver.hpp"

namespace invreg::test {

/// Relative error between the analytic directional derivative of the full
/// cost Q_E + alpha R and a central finite difference along a random
/// direction supported on one block of the (x, u_hat) vector.
inline double fd_block_error(const ProblemInstance& P, const std::vector<double>& x,
                             const std::vector<double>& u, const ObservationVector& y,
                             double alpha, bool param_block, std::size_t off,
                             std::size_t len, Rng& rng, double step = 1e-6) {
  const std::vector<double> lift = P.data_lift(y);
  std::vector<double> total(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) total[i] = u[i] + lift[i];

  std::vector<double> gx(x.size(), 0.0), gu(u.size(), 0.0);
  P.misfit_total_gradient(x, total, gx, gu);
  std::vector<double> rx(x.size(), 0.0), ru(u.size(), 0.0);
  P.regularizer_gradient(x, u, rx, ru);
  axpy(alpha, rx, std::span<double>(gx));
  axpy(alpha, ru, std::span<double>(gu));

  std::vector<double> dir(param_block ? x.size() : u.size(), 0.0);
  for (std::size_t k = off; k < off + len; ++k) dir[k] = rng.uniform(-1.0, 1.0);
  const double dn = norm2(dir);
  for (double& d : dir) d /= dn;

  auto cost_at = [&](double t) {
    std::vector<double> xt = x, ut = u;
    if (param_block)
      axpy(t, dir, std::span<double>(xt));
    else
      axpy(t, dir, std::span<double>(ut));
    return P.misfit(xt, ut, y) + alpha * P.regularizer(xt, ut);
  };
  const double fd = (cost_at(step) - cost_at(-step)) / (2.0 * step);
  const double an = param_block ? dot(gx, dir) : dot(gu, dir);
  return std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1e-12});
}

}  // namespace invreg::test
