#pragma once

#include <string>
#include <thread>
#include <vector>

#include "invreg/solver.hpp"

namespace invreg {

struct SweepRow {
  double delta = 0.0;
  double alpha = 0.0;
  double error = 0.0;
  double discrepancy_value = 0.0;
  double b_norm = 0.0;
  int iterations = 0;
  bool feasible = false;
  double ratio_quadratic = 0.0;  // delta^2 / alpha
  double ratio_linear = 0.0;     // delta / alpha
  std::vector<double> cost_trace;
  std::string failure;  // non-empty when the solve threw
};

struct ConvergenceReport {
  std::vector<SweepRow> rows;
  bool b_norm_bounded = false;
  bool error_decreased = false;
  bool rule_violated = false;
  std::uint64_t base_seed = 0;
};

/// Perturbs y componentwise by uniform noise of max-norm exactly delta:
/// uniform draw on [-delta, delta], one random component forced to +-delta,
/// then the problem's data normalization followed by a rescale so that
/// S(y, y_delta) = delta holds exactly even when normalization moved values.
inline ObservationVector inject_noise(const ProblemInstance& P, const ObservationVector& y,
                                      double delta, std::uint64_t seed) {
  require(delta > 0.0, "inject_noise: delta must be positive");
  Rng rng(seed);
  ObservationVector yd = y;
  for (double& v : yd.values) v += rng.uniform(-delta, delta);
  const std::size_t pin = rng.next_index(yd.values.size());
  yd.values[pin] = y.values[pin] + (rng.next_double() < 0.5 ? -delta : delta);
  P.normalize_data(yd);
  double m = 0.0;
  for (std::size_t i = 0; i < yd.values.size(); ++i)
    m = std::max(m, std::abs(yd.values[i] - y.values[i]));
  if (m > 0.0) {
    const double s = delta / m;
    for (std::size_t i = 0; i < yd.values.size(); ++i)
      yd.values[i] = y.values[i] + s * (yd.values[i] - y.values[i]);
  }
  yd.noise_level = delta;
  return yd;
}

/// Empirical convergence study: one regularized solve per noise level, with
/// alpha chosen by the delta^2 rule (or a fixed alpha, which sets the
/// rule-violation flag). Per-delta runs are independent and may execute in
/// parallel; each uses seed base_seed + index.
inline ConvergenceReport run_noise_sweep(const ProblemInstance& P,
                                         const ObservationVector& y_exact,
                                         const std::vector<double>& deltas,
                                         const RegularizationWeights& weights,
                                         const AdmissibleSetSpec& spec,
                                         const SolverConfig& config,
                                         std::span<const double> x_true,
                                         std::uint64_t base_seed, int jobs = 1,
                                         double fixed_alpha = 0.0) {
  require(!deltas.empty(), "run_noise_sweep: need at least one delta");
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    require(deltas[k] > 0.0, "run_noise_sweep: deltas must be positive");
    if (k > 0) require(deltas[k] < deltas[k - 1], "run_noise_sweep: deltas must decrease strictly");
  }

  ConvergenceReport rep;
  rep.base_seed = base_seed;
  rep.rule_violated = fixed_alpha > 0.0;
  rep.rows.resize(deltas.size());

  auto run_one = [&](std::size_t k) {
    SweepRow& row = rep.rows[k];
    row.delta = deltas[k];
    try {
      row.alpha = fixed_alpha > 0.0 ? fixed_alpha : choose_alpha(deltas[k], weights);
      row.ratio_quadratic = deltas[k] * deltas[k] / row.alpha;
      row.ratio_linear = deltas[k] / row.alpha;
      const ObservationVector yd = inject_noise(P, y_exact, deltas[k], base_seed + k);
      const SolverResult sr = minimize(P, yd, row.alpha, spec, config);
      row.error = P.parameter_distance(sr.parameters, x_true);
      row.discrepancy_value = sr.discrepancy_value;
      row.b_norm = sr.b_norm;
      row.iterations = sr.iterations;
      row.feasible = sr.constraint_satisfied;
      row.cost_trace = sr.cost_trace;
    } catch (const std::exception& e) {
      row.failure = e.what();
      row.feasible = false;
    }
  };

  if (jobs <= 1) {
    for (std::size_t k = 0; k < deltas.size(); ++k) run_one(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
      pool.emplace_back(run_one, k);
      if (int(pool.size()) == jobs) {
        for (auto& t : pool) t.join();
        pool.clear();
      }
    }
    for (auto& t : pool) t.join();
  }

  bool any_failure = false;
  for (const auto& r : rep.rows) any_failure |= !r.failure.empty();
  if (!any_failure && !rep.rows.empty()) {
    rep.b_norm_bounded = true;
    for (const auto& r : rep.rows) rep.b_norm_bounded &= r.b_norm <= 2.0 * rep.rows.front().b_norm;
    rep.error_decreased = rep.rows.back().error < rep.rows.front().error;
  }
  return rep;
}

}  // namespace invreg
