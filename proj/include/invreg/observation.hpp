#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "invreg/util.hpp"

namespace invreg {

struct ObservationBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Finite-dimensional data vector with labeled blocks and a noise level.
struct ObservationVector {
  std::vector<double> values;
  std::vector<ObservationBlock> blocks;
  double noise_level = 0.0;

  std::size_t size() const { return values.size(); }

  /// Blocks must tile [0, size) exactly, in order, without overlap.
  void validate() const {
    require(noise_level >= 0.0, "observation: noise level must be nonnegative");
    std::size_t at = 0;
    for (const auto& b : blocks) {
      require(b.offset == at, "observation: blocks must tile the value range");
      at += b.length;
    }
    require(at == values.size(), "observation: blocks must cover all values");
  }

  bool same_structure(const ObservationVector& o) const {
    if (values.size() != o.values.size() || blocks.size() != o.blocks.size()) return false;
    for (std::size_t k = 0; k < blocks.size(); ++k)
      if (blocks[k].name != o.blocks[k].name || blocks[k].offset != o.blocks[k].offset ||
          blocks[k].length != o.blocks[k].length)
        return false;
    return true;
  }

  std::span<const double> block(std::size_t k) const {
    return std::span<const double>(values).subspan(blocks[k].offset, blocks[k].length);
  }
};

/// Discrepancy measure S(y1, y2) = ||y2 - y1||_inf.
inline double discrepancy(const ObservationVector& y1, const ObservationVector& y2) {
  require(y1.same_structure(y2), "discrepancy: mismatched block structure");
  double m = 0.0;
  for (std::size_t i = 0; i < y1.values.size(); ++i)
    m = std::max(m, std::abs(y2.values[i] - y1.values[i]));
  return m;
}

struct RegularizationWeights {
  double alpha = 0.0;   // chosen value (single component, m = 1)
  double alpha0 = 1.0;  // rule constant
  double c0 = 1.0;      // bound constant in delta^2 / alpha <= c0

  void validate() const {
    require(alpha0 > 0.0 && c0 > 0.0, "regularization weights: alpha0, c0 must be positive");
  }
};

struct AdmissibleSetSpec {
  double tau = 1.5;  // discrepancy factor, strictly > 1
  double rho = 0.0;  // radius of the R~ constraint
  std::vector<double> box_lower, box_upper;

  void validate() const {
    require(tau > 1.0, "admissible set: tau must be strictly greater than 1");
    require(box_lower.size() == box_upper.size(), "admissible set: box bound size mismatch");
    for (std::size_t i = 0; i < box_lower.size(); ++i)
      require(box_lower[i] < box_upper[i], "admissible set: box_lower must be < box_upper");
  }
};

enum class StepRule { fixed, backtracking };

struct PenaltySchedule {
  double initial_weight = 1.0;
  double growth = 10.0;
  int max_stages = 8;

  void validate() const {
    require(initial_weight > 0.0, "penalty schedule: initial weight must be positive");
    require(growth > 1.0, "penalty schedule: growth factor must be > 1");
    require(max_stages >= 1, "penalty schedule: need at least one stage");
  }
};

struct SolverConfig {
  int max_iterations = 300;
  StepRule step_rule = StepRule::backtracking;
  double initial_step = 1.0;
  double gradient_tolerance = 1e-9;
  PenaltySchedule penalty;

  void validate() const {
    require(max_iterations >= 1, "solver config: max_iterations must be >= 1");
    require(initial_step > 0.0, "solver config: initial_step must be positive");
    require(gradient_tolerance > 0.0, "solver config: gradient_tolerance must be positive");
    penalty.validate();
  }
};

struct SolverResult {
  std::vector<double> parameters;    // x
  std::vector<double> kernel_state;  // u_hat
  double final_cost = 0.0;           // Q_E + alpha * R at the returned point
  std::vector<double> cost_trace;    // penalized cost after each accepted outer iteration
  std::vector<int> stage_starts;     // cost_trace index where each penalty stage begins
  double discrepancy_value = 0.0;    // ||C(u_hat)||_inf
  double constraint_value = 0.0;     // R~(x, u_hat)
  bool constraint_satisfied = false;
  double b_norm = 0.0;
  int iterations = 0;
  std::string diagnostic;
};

}  // namespace invreg
