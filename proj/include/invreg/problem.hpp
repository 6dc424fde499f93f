#pragma once

#include <span>
#include <string>
#include <vector>

#include "invreg/observation.hpp"

namespace invreg {

/// Contract every physics module satisfies. The state splits into a kernel
/// part u_hat (the optimization variable) and a data lift C^ri(y); all model
/// functionals below are evaluated on the total state u_hat + lift.
///
/// All methods are const and safe to call concurrently.
class ProblemInstance {
 public:
  virtual ~ProblemInstance() = default;

  virtual std::string name() const = 0;
  virtual std::size_t parameter_size() const = 0;
  virtual std::size_t state_size() const = 0;

  /// Lift C^ri(y) of a data vector into a state-shaped vector.
  virtual std::vector<double> data_lift(const ObservationVector& y) const = 0;

  /// Model misfit Q_E evaluated on the total state.
  virtual double misfit_total(std::span<const double> x,
                              std::span<const double> u_total) const = 0;
  virtual void misfit_total_gradient(std::span<const double> x,
                                     std::span<const double> u_total,
                                     std::span<double> grad_x,
                                     std::span<double> grad_u) const = 0;

  /// Regularization functional R and its raw gradient.
  virtual double regularizer(std::span<const double> x,
                             std::span<const double> u_hat) const = 0;
  virtual void regularizer_gradient(std::span<const double> x,
                                    std::span<const double> u_hat,
                                    std::span<double> grad_x,
                                    std::span<double> grad_u) const = 0;

  /// Observation of the kernel part, C(u_hat); flat vector with the data's
  /// block layout.
  virtual std::vector<double> kernel_observation(std::span<const double> u_hat) const = 0;
  /// Accumulates sum_j w_j * dC_j/du into grad_u.
  virtual void kernel_observation_adjoint(std::span<const double> w,
                                          std::span<double> grad_u) const = 0;

  /// Constraint functional R~ (parameter box distance, or sparsity norm).
  virtual double constraint_functional(std::span<const double> x,
                                       std::span<const double> u_hat) const = 0;
  /// True when projecting the parameters realizes R~ <= rho exactly, so the
  /// solver needs no penalty for it.
  virtual bool constraint_is_box() const = 0;
  /// Accumulates the subgradient of R~ with respect to x (only consulted when
  /// constraint_is_box() is false).
  virtual void constraint_subgradient(std::span<const double> x,
                                      std::span<const double> u_hat,
                                      std::span<double> grad_x) const {
    (void)x;
    (void)u_hat;
    (void)grad_x;
  }

  /// Projects the parameters onto the admissible box of radius rho (and any
  /// structural constraints such as support masks). Idempotent.
  virtual void project_parameters(std::span<double> x, double rho) const = 0;

  /// Extra quadratic penalties that realize membership in the state space V
  /// (e.g. the EIT gap/electrode constancy conditions). Share the penalty
  /// weight of the discrepancy constraint. Zero by default.
  virtual double membership_penalty(std::span<const double> u_hat) const {
    (void)u_hat;
    return 0.0;
  }
  virtual void membership_penalty_gradient(std::span<const double> u_hat,
                                           std::span<double> grad_u) const {
    (void)u_hat;
    (void)grad_u;
  }

  /// Capability flag: Im(C) = Y allows the reduced admissible set
  /// ||C(u_hat)||_inf <= tau*delta; otherwise the solver uses the full form
  /// S(C(u_hat + C^ri(y^delta)), y^delta) <= tau*delta.
  virtual bool image_is_full_space() const { return true; }

  /// ||D_i(x, u_hat) C^ri(z)||_W per residual block, for the data-continuity
  /// estimate of the convergence theory.
  virtual std::vector<double> lift_residual_norms(std::span<const double> x,
                                                  std::span<const double> u_hat,
                                                  const ObservationVector& z) const = 0;

  /// Problem-specific ||.||_B norm.
  virtual double b_norm(std::span<const double> x, std::span<const double> u_hat) const = 0;

  /// Relative parameter error in the problem norm, used by noise sweeps.
  virtual double parameter_distance(std::span<const double> x,
                                    std::span<const double> x_ref) const = 0;

  virtual std::vector<double> initial_parameters() const = 0;

  /// Normalizes a data vector to the problem's observation space (e.g. EIT
  /// re-projects blocks to the sum-zero space). No-op by default.
  virtual void normalize_data(ObservationVector& y) const { (void)y; }

  /// Convenience: Q_E(x, u_hat; y) = misfit on the lifted total state.
  double misfit(std::span<const double> x, std::span<const double> u_hat,
                const ObservationVector& y) const {
    std::vector<double> total = data_lift(y);
    require(total.size() == u_hat.size(), "misfit: state size mismatch");
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += u_hat[i];
    return misfit_total(x, total);
  }
};

}  // namespace invreg
