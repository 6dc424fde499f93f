#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "invreg/ops.hpp"
#include "invreg/problem.hpp"

namespace invreg {

struct Electrode {
  double s_begin = 0.0;
  double s_end = 0.0;
  double contact_impedance = 1.0;
};

/// Electrode arclength layout on the boundary polyline; electrodes are
/// counterclockwise, pairwise disjoint, with gaps in between.
struct ElectrodeLayout {
  std::vector<Electrode> electrodes;

  void validate(double perimeter) const {
    require(electrodes.size() >= 2, "electrode layout: need at least 2 electrodes");
    for (std::size_t l = 0; l < electrodes.size(); ++l) {
      const auto& e = electrodes[l];
      require(e.contact_impedance > 0.0, "electrode layout: contact impedances must be positive");
      require(e.s_begin >= 0.0 && e.s_end <= perimeter && e.s_begin < e.s_end,
              "electrode layout: electrode arclengths out of range");
      if (l > 0)
        require(e.s_begin > electrodes[l - 1].s_end, "electrode layout: electrodes overlap");
    }
  }

  /// L equally spaced electrodes covering the given fraction of the perimeter.
  static ElectrodeLayout uniform(double perimeter, int L, double coverage, double z) {
    require(L >= 2, "electrode layout: need at least 2 electrodes");
    require(coverage > 0.0 && coverage < 1.0, "electrode layout: coverage must be in (0,1)");
    ElectrodeLayout lay;
    const double len = coverage * perimeter / L;
    for (int l = 0; l < L; ++l) {
      const double c = (l + 0.5) * perimeter / L;
      lay.electrodes.push_back({c - len / 2.0, c + len / 2.0, z});
    }
    return lay;
  }
};

struct EitSynthesis {
  ObservationVector data;
  std::vector<double> state;  // converged total fields, kernel-state layout
  double misfit_at_optimum = 0.0;
};

/// Electrical impedance tomography with the complete electrode model, posed
/// as a first-order least-squares problem in the potentials (phi_i, psi_i):
///   q_i = sqrt(sigma) grad(phi_i) - (1/sqrt(sigma)) perp_grad(psi_i).
/// The observation collects per pattern the gap differences of psi (applied
/// currents) and the electrode constants C_l (voltages, normalized to sum
/// zero); both are exact linear functionals of the boundary trace.
class EitProblem : public ProblemInstance {
 public:
  EitProblem(const Grid& grid, const ElectrodeLayout& layout,
             std::vector<std::vector<double>> current_patterns, double sigma_lo,
             double sigma_hi, double forward_penalty = 1e3)
      : grid_(grid),
        patterns_(std::move(current_patterns)),
        sigma_lo_(sigma_lo),
        sigma_hi_(sigma_hi),
        forward_penalty_(forward_penalty) {
    require(sigma_lo_ > 0.0 && sigma_lo_ < sigma_hi_, "eit: need 0 < sigma_lo < sigma_hi");
    boundary_ = trace_boundary(grid_);
    layout.validate(boundary_.perimeter);
    snap_layout(layout);
    L_ = int(electrodes_.size());
    I_ = int(patterns_.size());
    require(I_ >= 1, "eit: need at least one current pattern");
    for (const auto& p : patterns_) {
      require(int(p.size()) == L_, "eit: pattern size must equal electrode count");
      double s = 0.0, m = 0.0;
      for (double v : p) {
        s += v;
        m = std::max(m, std::abs(v));
      }
      require(std::abs(s) <= 1e-10 * std::max(1.0, m), "eit: patterns must sum to zero");
    }
    build_lift_basis();
    build_functionals();
  }

  EitProblem(const EitProblem&) = delete;
  EitProblem& operator=(const EitProblem&) = delete;

  const Grid& grid() const { return grid_; }
  const BoundaryLayout& boundary() const { return boundary_; }
  int electrode_count() const { return L_; }
  int pattern_count() const { return I_; }
  const ScalarField& psi_lift_basis(int l) const { return psi0_[l]; }
  const ScalarField& phi_lift_basis(int l) const { return phi0_[l]; }

  /// Trigonometric current patterns j_{i,l} = cos(i * theta_l), mean-corrected,
  /// with theta_l the geometric angle of the electrode centre.
  static std::vector<std::vector<double>> trig_patterns(const Grid& grid,
                                                        const BoundaryLayout& bl,
                                                        const ElectrodeLayout& layout, int I) {
    std::vector<double> theta;
    for (const auto& e : layout.electrodes) {
      const int p = bl.snap(0.5 * (e.s_begin + e.s_end));
      const int n = bl.nodes[p];
      const double x = grid.node_x(n % (grid.nx + 1)), y = grid.node_y(n / (grid.nx + 1));
      theta.push_back(std::atan2(y - 0.5, x - 0.5));
    }
    std::vector<std::vector<double>> pats;
    for (int i = 1; i <= I; ++i) {
      std::vector<double> p(theta.size());
      double mean = 0.0;
      for (std::size_t l = 0; l < theta.size(); ++l) mean += p[l] = std::cos(i * theta[l]);
      mean /= double(theta.size());
      for (double& v : p) v -= mean;
      pats.push_back(std::move(p));
    }
    return pats;
  }

  std::string name() const override { return "eit"; }
  std::size_t parameter_size() const override { return std::size_t(grid_.n_cells()); }
  std::size_t state_size() const override {
    return std::size_t(I_) * 2 * std::size_t(grid_.n_nodes());
  }

  std::span<const double> phi_of(std::span<const double> state, int i) const {
    return state.subspan(std::size_t(i) * 2 * grid_.n_nodes(), grid_.n_nodes());
  }
  std::span<const double> psi_of(std::span<const double> state, int i) const {
    return state.subspan((std::size_t(i) * 2 + 1) * grid_.n_nodes(), grid_.n_nodes());
  }

  /// Observation of any state-shaped field set, as a labeled data vector.
  ObservationVector observe_state(std::span<const double> state) const {
    ObservationVector y;
    y.values = kernel_observation(state);
    for (int i = 0; i < I_; ++i) {
      y.blocks.push_back({"currents", std::size_t(i) * 2 * L_, std::size_t(L_)});
      y.blocks.push_back({"voltages", (std::size_t(i) * 2 + 1) * L_, std::size_t(L_)});
    }
    return y;
  }

  std::vector<double> data_lift(const ObservationVector& y) const override {
    require(y.size() == std::size_t(2 * L_ * I_), "eit: data vector has wrong length");
    std::vector<double> state(state_size(), 0.0);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      std::span<const double> eta(y.values.data() + std::size_t(i) * 2 * L_, L_);
      std::span<const double> xi(y.values.data() + (std::size_t(i) * 2 + 1) * L_, L_);
      check_sum_zero(eta);
      check_sum_zero(xi);
      double* phi = state.data() + std::size_t(i) * 2 * nn;
      double* psi = phi + nn;
      double prefix = 0.0;
      for (int l = 0; l < L_; ++l) {
        prefix += eta[l];
        const double a = -prefix;
        const double c = xi[l] - electrodes_[l].z * eta[l] / electrodes_[l].length;
        for (int n = 0; n < nn; ++n) {
          psi[n] += a * psi0_[l].v[n];
          phi[n] += c * phi0_[l].v[n];
        }
      }
    }
    return state;
  }

  /// Per-pattern residual fields q_i on the active cells.
  std::vector<VectorField> residual(std::span<const double> x,
                                    std::span<const double> u_total) const {
    check_sigma(x);
    std::vector<VectorField> qs;
    for (int i = 0; i < I_; ++i) {
      ScalarField phi(grid_), psi(grid_);
      std::copy_n(phi_of(u_total, i).data(), grid_.n_nodes(), phi.v.data());
      std::copy_n(psi_of(u_total, i).data(), grid_.n_nodes(), psi.v.data());
      const VectorField g = gradient(phi), p = perp_gradient(psi);
      VectorField q(grid_);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c])
          fosls_combine(x[c], g.x[c], g.y[c], p.x[c], p.y[c], q.x[c], q.y[c]);
      qs.push_back(std::move(q));
    }
    return qs;
  }

  double misfit_total(std::span<const double> x, std::span<const double> u) const override {
    double s = 0.0;
    for (const VectorField& q : residual(x, u)) s += 0.5 * l2_norm_sq(q);
    return s;
  }

  void misfit_total_gradient(std::span<const double> x, std::span<const double> u,
                             std::span<double> gx, std::span<double> gu) const override {
    check_sigma(x);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField phi(grid_), psi(grid_);
      std::copy_n(phi_of(u, i).data(), nn, phi.v.data());
      std::copy_n(psi_of(u, i).data(), nn, psi.v.data());
      const VectorField g = gradient(phi), p = perp_gradient(psi);
      VectorField sq(grid_), pq(grid_);
      for (int c = 0; c < grid_.n_cells(); ++c) {
        if (!grid_.cell_active[c]) continue;
        double qx, qy;
        fosls_combine(x[c], g.x[c], g.y[c], p.x[c], p.y[c], qx, qy);
        const double r = std::sqrt(x[c]);
        gx[c] += 0.5 * grid_.cell_area() *
                 (g.x[c] * g.x[c] + g.y[c] * g.y[c] -
                  (p.x[c] * p.x[c] + p.y[c] * p.y[c]) / (x[c] * x[c]));
        sq.x[c] = grid_.cell_area() * r * qx;
        sq.y[c] = grid_.cell_area() * r * qy;
        pq.x[c] = -grid_.cell_area() * qx / r;
        pq.y[c] = -grid_.cell_area() * qy / r;
      }
      add_grad_adjoint(sq, 1.0, gu.subspan(std::size_t(i) * 2 * nn, nn));
      add_perp_grad_adjoint(pq, 1.0, gu.subspan((std::size_t(i) * 2 + 1) * nn, nn));
    }
  }

  double regularizer(std::span<const double>, std::span<const double> u) const override {
    double s = 0.0;
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField f(grid_);
      std::copy_n(phi_of(u, i).data(), nn, f.v.data());
      s += 0.5 * smooth_norm_sq(f);
      std::copy_n(psi_of(u, i).data(), nn, f.v.data());
      s += 0.5 * smooth_norm_sq(f);
    }
    return s;
  }

  void regularizer_gradient(std::span<const double>, std::span<const double> u,
                            std::span<double>, std::span<double> gu) const override {
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField f(grid_);
      std::copy_n(phi_of(u, i).data(), nn, f.v.data());
      add_smooth_norm_grad(f, 0.5, gu.subspan(std::size_t(i) * 2 * nn, nn));
      std::copy_n(psi_of(u, i).data(), nn, f.v.data());
      add_smooth_norm_grad(f, 0.5, gu.subspan((std::size_t(i) * 2 + 1) * nn, nn));
    }
  }

  std::vector<double> kernel_observation(std::span<const double> u) const override {
    std::vector<double> out(std::size_t(2 * L_ * I_), 0.0);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      std::span<const double> phi = u.subspan(std::size_t(i) * 2 * nn, nn);
      std::span<const double> psi = u.subspan((std::size_t(i) * 2 + 1) * nn, nn);
      double* cur = out.data() + std::size_t(i) * 2 * L_;
      double* vol = cur + L_;
      double mean = 0.0;
      for (int l = 0; l < L_; ++l) {
        cur[l] = apply_psi(gap_mean_[prev(l)], psi) - apply_psi(gap_mean_[l], psi);
        vol[l] = apply_pair(voltage_raw_[l], phi, psi);
        mean += vol[l];
      }
      mean /= double(L_);
      for (int l = 0; l < L_; ++l) vol[l] -= mean;
    }
    return out;
  }

  void kernel_observation_adjoint(std::span<const double> w,
                                  std::span<double> gu) const override {
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      std::span<double> gphi = gu.subspan(std::size_t(i) * 2 * nn, nn);
      std::span<double> gpsi = gu.subspan((std::size_t(i) * 2 + 1) * nn, nn);
      const double* cur = w.data() + std::size_t(i) * 2 * L_;
      const double* vol = cur + L_;
      double mean = 0.0;
      for (int l = 0; l < L_; ++l) mean += vol[l];
      mean /= double(L_);
      for (int l = 0; l < L_; ++l) {
        accumulate_psi(gap_mean_[prev(l)], cur[l], gpsi);
        accumulate_psi(gap_mean_[l], -cur[l], gpsi);
        accumulate_pair(voltage_raw_[l], vol[l] - mean, gphi, gpsi);
      }
    }
  }

  double constraint_functional(std::span<const double> x,
                               std::span<const double>) const override {
    const double mid = 0.5 * (sigma_lo_ + sigma_hi_);
    double m = 0.0;
    for (int c = 0; c < grid_.n_cells(); ++c)
      if (grid_.cell_active[c]) m = std::max(m, std::abs(x[c] - mid));
    return m;
  }

  bool constraint_is_box() const override { return true; }

  void project_parameters(std::span<double> x, double rho) const override {
    const double mid = 0.5 * (sigma_lo_ + sigma_hi_);
    const double half = std::max(0.0, std::min(rho, 0.5 * (sigma_hi_ - sigma_lo_)));
    for (int c = 0; c < grid_.n_cells(); ++c)
      x[c] = grid_.cell_active[c] ? std::clamp(x[c], mid - half, mid + half) : mid;
  }

  double membership_penalty(std::span<const double> u) const override {
    double pen = 0.0;
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      std::span<const double> phi = u.subspan(std::size_t(i) * 2 * nn, nn);
      std::span<const double> psi = u.subspan((std::size_t(i) * 2 + 1) * nn, nn);
      for (int l = 0; l < L_; ++l) {
        pen += variance_of(gap_values(l, psi));
        pen += variance_of(electrode_cl_values(l, phi, psi));
      }
    }
    return pen;
  }

  void membership_penalty_gradient(std::span<const double> u,
                                   std::span<double> gu) const override {
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      std::span<const double> phi = u.subspan(std::size_t(i) * 2 * nn, nn);
      std::span<const double> psi = u.subspan((std::size_t(i) * 2 + 1) * nn, nn);
      std::span<double> gphi = gu.subspan(std::size_t(i) * 2 * nn, nn);
      std::span<double> gpsi = gu.subspan((std::size_t(i) * 2 + 1) * nn, nn);
      for (int l = 0; l < L_; ++l) {
        const std::vector<double> gv = gap_values(l, psi);
        const std::vector<double> wv = variance_weights(gv);
        for (std::size_t k = 0; k < gv.size(); ++k) gpsi[gap_nodes_[l][k]] += wv[k];
        const std::vector<double> cv = electrode_cl_values(l, phi, psi);
        const std::vector<double> wc = variance_weights(cv);
        for (std::size_t k = 0; k < cv.size(); ++k)
          accumulate_pair(electrode_cl_[l][k], wc[k], gphi, gpsi);
      }
    }
  }

  std::vector<double> lift_residual_norms(std::span<const double> x, std::span<const double>,
                                          const ObservationVector& z) const override {
    check_sigma(x);
    std::vector<double> norms(std::size_t(I_), 0.0);
    const std::vector<double> lift = data_lift_unchecked(z);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      bool nonzero = false;
      for (int j = 0; j < 2 * L_; ++j)
        nonzero |= z.values[std::size_t(i) * 2 * L_ + j] != 0.0;
      if (!nonzero) continue;
      ScalarField phi(grid_), psi(grid_);
      std::copy_n(lift.data() + std::size_t(i) * 2 * nn, nn, phi.v.data());
      std::copy_n(lift.data() + (std::size_t(i) * 2 + 1) * nn, nn, psi.v.data());
      const VectorField g = gradient(phi), p = perp_gradient(psi);
      VectorField q(grid_);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c])
          fosls_combine(x[c], g.x[c], g.y[c], p.x[c], p.y[c], q.x[c], q.y[c]);
      norms[i] = std::sqrt(l2_norm_sq(q));
    }
    return norms;
  }

  double b_norm(std::span<const double> x, std::span<const double> u) const override {
    double sup = 0.0;
    for (int c = 0; c < grid_.n_cells(); ++c)
      if (grid_.cell_active[c]) sup = std::max(sup, std::abs(x[c]));
    double smooth = 0.0;
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField f(grid_);
      std::copy_n(phi_of(u, i).data(), nn, f.v.data());
      smooth += smooth_norm_sq(f);
      std::copy_n(psi_of(u, i).data(), nn, f.v.data());
      smooth += smooth_norm_sq(f);
    }
    return sup + std::sqrt(smooth) + norm2(kernel_observation(u));
  }

  double parameter_distance(std::span<const double> x,
                            std::span<const double> x_ref) const override {
    double num = 0.0, den = 0.0;
    for (int c = 0; c < grid_.n_cells(); ++c)
      if (grid_.cell_active[c]) {
        num += grid_.cell_area() * (x[c] - x_ref[c]) * (x[c] - x_ref[c]);
        den += grid_.cell_area() * x_ref[c] * x_ref[c];
      }
    return std::sqrt(num / den);
  }

  std::vector<double> initial_parameters() const override {
    return std::vector<double>(parameter_size(), 0.5 * (sigma_lo_ + sigma_hi_));
  }

  void normalize_data(ObservationVector& y) const override {
    for (const auto& b : y.blocks) {
      double mean = 0.0;
      for (std::size_t j = 0; j < b.length; ++j) mean += y.values[b.offset + j];
      mean /= double(b.length);
      for (std::size_t j = 0; j < b.length; ++j) y.values[b.offset + j] -= mean;
    }
  }

  /// Manufactures complete-electrode-model data for a given conductivity by
  /// minimizing Q_E per pattern over the total potentials, with the gap
  /// traces of psi pinned to the prescribed currents and the C_l constancy
  /// condition enforced by a quadratic penalty. Voltages are read off the
  /// converged electrode constants and normalized to sum zero.
  EitSynthesis synthesize(std::span<const double> sigma_true) const {
    check_sigma(sigma_true);
    const int nn = grid_.n_nodes();
    EitSynthesis out;
    out.state.assign(state_size(), 0.0);

    for (int i = 0; i < I_; ++i) {
      // pinned psi values on gap nodes: psi|_{g_l} = -sum_{k<=l} j_k
      std::vector<double> psi_pin(std::size_t(nn), 0.0);
      std::vector<std::uint8_t> pinned(std::size_t(nn), 0);
      double prefix = 0.0;
      for (int l = 0; l < L_; ++l) {
        prefix += patterns_[i][l];
        for (int n : gap_nodes_[l]) {
          psi_pin[n] = -prefix;
          pinned[n] = 1;
        }
      }

      std::vector<int> free_dof;  // phi entries 0..nn-1, psi entries nn..2nn-1
      for (int n = 0; n < nn; ++n)
        if (grid_.node_active[n]) free_dof.push_back(n);
      for (int n = 0; n < nn; ++n)
        if (grid_.node_active[n] && !pinned[n]) free_dof.push_back(nn + n);

      auto grad_f = [&](const std::vector<double>& phi, const std::vector<double>& psi,
                        std::vector<double>& gphi, std::vector<double>& gpsi) {
        gphi.assign(std::size_t(nn), 0.0);
        gpsi.assign(std::size_t(nn), 0.0);
        ScalarField fphi(grid_), fpsi(grid_);
        fphi.v = phi;
        fpsi.v = psi;
        const VectorField g = gradient(fphi), p = perp_gradient(fpsi);
        VectorField sq(grid_), pq(grid_);
        for (int c = 0; c < grid_.n_cells(); ++c) {
          if (!grid_.cell_active[c]) continue;
          double qx, qy;
          fosls_combine(sigma_true[c], g.x[c], g.y[c], p.x[c], p.y[c], qx, qy);
          const double r = std::sqrt(sigma_true[c]);
          sq.x[c] = grid_.cell_area() * r * qx;
          sq.y[c] = grid_.cell_area() * r * qy;
          pq.x[c] = -grid_.cell_area() * qx / r;
          pq.y[c] = -grid_.cell_area() * qy / r;
        }
        add_grad_adjoint(sq, 1.0, gphi);
        add_perp_grad_adjoint(pq, 1.0, gpsi);
        for (int l = 0; l < L_; ++l) {
          const std::vector<double> cv = electrode_cl_values(l, phi, psi);
          const std::vector<double> wc = variance_weights(cv);
          for (std::size_t k = 0; k < cv.size(); ++k)
            accumulate_pair(electrode_cl_[l][k], forward_penalty_ * wc[k], gphi, gpsi);
        }
      };

      std::vector<double> phi0(std::size_t(nn), 0.0), gphi0, gpsi0, gphi, gpsi;
      grad_f(phi0, psi_pin, gphi0, gpsi0);

      std::vector<double> b(free_dof.size());
      for (std::size_t k = 0; k < free_dof.size(); ++k) {
        const int d = free_dof[k];
        b[k] = -(d < nn ? gphi0[d] : gpsi0[d - nn]);
      }

      std::vector<double> phi(std::size_t(nn)), psi(std::size_t(nn));
      auto apply = [&](const std::vector<double>& z, std::vector<double>& az) {
        phi.assign(std::size_t(nn), 0.0);
        psi = psi_pin;
        for (std::size_t k = 0; k < free_dof.size(); ++k) {
          const int d = free_dof[k];
          (d < nn ? phi[d] : psi[d - nn]) = z[k] + (d < nn ? 0.0 : psi_pin[d - nn]);
        }
        grad_f(phi, psi, gphi, gpsi);
        for (std::size_t k = 0; k < free_dof.size(); ++k) {
          const int d = free_dof[k];
          az[k] = (d < nn ? gphi[d] : gpsi[d - nn]) - (d < nn ? gphi0[d] : gpsi0[d - nn]);
        }
      };

      std::vector<double> z;
      const CgResult cg = conjugate_gradient(apply, b, z, 30000, 1e-11);
      if (!cg.converged)
        throw std::runtime_error("eit forward solve non-convergence: pattern " +
                                 std::to_string(i) + ", residual " +
                                 format_double(cg.residual) + " after " +
                                 std::to_string(cg.iterations) + " iterations");

      double* sphi = out.state.data() + std::size_t(i) * 2 * nn;
      double* spsi = sphi + nn;
      std::copy_n(psi_pin.data(), nn, spsi);
      for (std::size_t k = 0; k < free_dof.size(); ++k) {
        const int d = free_dof[k];
        if (d < nn)
          sphi[d] = z[k];
        else
          spsi[d - nn] += z[k];
      }
    }

    out.data = observe_state(out.state);
    out.misfit_at_optimum = misfit_total(sigma_true, out.state);
    return out;
  }

 private:
  struct LinFunc {
    std::vector<std::pair<int, double>> phi, psi;  // node index -> coefficient
  };

  int prev(int l) const { return (l + L_ - 1) % L_; }

  static double apply_psi(const LinFunc& f, std::span<const double> psi) {
    double s = 0.0;
    for (const auto& [n, c] : f.psi) s += c * psi[n];
    return s;
  }
  static double apply_pair(const LinFunc& f, std::span<const double> phi,
                           std::span<const double> psi) {
    double s = apply_psi(f, psi);
    for (const auto& [n, c] : f.phi) s += c * phi[n];
    return s;
  }
  static void accumulate_psi(const LinFunc& f, double w, std::span<double> gpsi) {
    for (const auto& [n, c] : f.psi) gpsi[n] += w * c;
  }
  static void accumulate_pair(const LinFunc& f, double w, std::span<double> gphi,
                              std::span<double> gpsi) {
    accumulate_psi(f, w, gpsi);
    for (const auto& [n, c] : f.phi) gphi[n] += w * c;
  }

  static double variance_of(const std::vector<double>& v) {
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= double(v.size());
    double s = 0.0;
    for (double a : v) s += (a - mean) * (a - mean);
    return s / double(v.size());
  }

  /// d variance / d v_k = (2/m)(v_k - mean).
  static std::vector<double> variance_weights(const std::vector<double>& v) {
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= double(v.size());
    std::vector<double> w(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) w[k] = 2.0 * (v[k] - mean) / double(v.size());
    return w;
  }

  std::vector<double> gap_values(int l, std::span<const double> psi) const {
    std::vector<double> v;
    v.reserve(gap_nodes_[l].size());
    for (int n : gap_nodes_[l]) v.push_back(psi[n]);
    return v;
  }

  std::vector<double> electrode_cl_values(int l, std::span<const double> phi,
                                          std::span<const double> psi) const {
    std::vector<double> v;
    v.reserve(electrode_cl_[l].size());
    for (const LinFunc& f : electrode_cl_[l]) v.push_back(apply_pair(f, phi, psi));
    return v;
  }

  void check_sigma(std::span<const double> x) const {
    for (int c = 0; c < grid_.n_cells(); ++c)
      if (grid_.cell_active[c])
        require(x[c] > 0.0, "eit: conductivity must be positive on the active region");
  }

  void check_sum_zero(std::span<const double> block) const {
    double s = 0.0, m = 0.0;
    for (double v : block) {
      s += v;
      m = std::max(m, std::abs(v));
    }
    if (std::abs(s) > 1e-10 * std::max(1.0, m))
      throw std::invalid_argument("eit: data not in R^L_diamond (block sum " +
                                  format_double(s) + ")");
  }

  std::vector<double> data_lift_unchecked(const ObservationVector& z) const {
    ObservationVector fixed = z;
    normalize_data(fixed);
    return data_lift(fixed);
  }

  void snap_layout(const ElectrodeLayout& layout) {
    const int nb = boundary_.size();
    for (const auto& e : layout.electrodes) {
      Snapped s;
      s.a = boundary_.snap(e.s_begin);
      s.b = boundary_.snap(e.s_end);
      s.z = e.contact_impedance;
      require(boundary_.count_between(s.a, s.b) >= 2 &&
                  boundary_.count_between(s.a, s.b) < nb,
              "eit: electrode snaps to fewer than 2 boundary nodes");
      s.length = boundary_.arc_between(s.a, s.b);
      for (int p = s.a;; p = boundary_.wrap(p + 1)) {
        s.nodes.push_back(boundary_.nodes[p]);
        if (p == s.b) break;
        s.ds.push_back(boundary_.arc_between(p, boundary_.wrap(p + 1)));
      }
      electrodes_.push_back(std::move(s));
    }
    for (std::size_t l = 0; l < electrodes_.size(); ++l) {
      const auto& cur = electrodes_[l];
      const auto& nxt = electrodes_[(l + 1) % electrodes_.size()];
      require(boundary_.count_between(cur.b, nxt.a) >= 2,
              "eit: electrodes must be separated by a nonempty gap");
      std::vector<int> gap;
      for (int p = cur.b;; p = boundary_.wrap(p + 1)) {
        gap.push_back(boundary_.nodes[p]);
        if (p == boundary_.wrap(nxt.a)) break;
      }
      gap_nodes_.push_back(std::move(gap));
      boundary_.segments.push_back(
          {SegmentKind::electrode, cur.a, cur.b, cur.z});
      boundary_.segments.push_back({SegmentKind::gap, cur.b, nxt.a, 0.0});
    }
  }

  void build_lift_basis() {
    const int nn = grid_.n_nodes();
    for (int l = 0; l < L_; ++l) {
      const auto& el = electrodes_[l];
      const auto& en = electrodes_[(l + 1) % L_];

      std::vector<double> psi_bd(std::size_t(nn), 0.0);
      for (std::size_t k = 0; k < el.nodes.size(); ++k) {
        double d = 0.0;  // arclength from node k to e_l^b
        for (std::size_t m = k; m < el.ds.size(); ++m) d += el.ds[m];
        psi_bd[el.nodes[k]] = 1.0 - d / el.length;
      }
      for (std::size_t k = 0; k < en.nodes.size(); ++k) {
        double d = 0.0;  // arclength from e_{l+1}^a to node k
        for (std::size_t m = 0; m < k; ++m) d += en.ds[m];
        psi_bd[en.nodes[k]] = 1.0 - d / en.length;
      }
      for (int n : gap_nodes_[l]) psi_bd[n] = 1.0;
      psi0_.push_back(harmonic_extension(grid_, psi_bd));

      std::vector<double> phi_bd(std::size_t(nn), 0.0);
      const double glen = gap_length(l), gprev = gap_length(prev(l));
      set_gap_ramp(phi_bd, l, /*from_start=*/true, glen);        // on g_l, 1 at e_l^b
      set_gap_ramp(phi_bd, prev(l), /*from_start=*/false, gprev);  // on g_{l-1}, 1 at e_l^a
      for (int n : el.nodes) phi_bd[n] = 1.0;
      phi0_.push_back(harmonic_extension(grid_, phi_bd));
    }
  }

  double gap_length(int l) const {
    const auto& cur = electrodes_[l];
    const auto& nxt = electrodes_[(l + 1) % L_];
    return boundary_.arc_between(cur.b, nxt.a);
  }

  void set_gap_ramp(std::vector<double>& bd, int l, bool from_start, double glen) const {
    const auto& cur = electrodes_[l];
    const auto& nxt = electrodes_[(l + 1) % L_];
    for (int p = cur.b;; p = boundary_.wrap(p + 1)) {
      const double d = from_start ? boundary_.arc_between(cur.b, p)
                                  : boundary_.arc_between(p, boundary_.wrap(nxt.a));
      bd[boundary_.nodes[p]] = 1.0 - d / glen;
      if (p == boundary_.wrap(nxt.a)) break;
    }
  }

  void build_functionals() {
    for (int l = 0; l < L_; ++l) {
      LinFunc gm;
      const double w = 1.0 / double(gap_nodes_[l].size());
      for (int n : gap_nodes_[l]) gm.psi.emplace_back(n, w);
      gap_mean_.push_back(std::move(gm));
    }
    for (int l = 0; l < L_; ++l) {
      const auto& el = electrodes_[l];
      // trapezoid weights over the electrode nodes
      std::vector<double> tw(el.nodes.size(), 0.0);
      for (std::size_t k = 0; k + 1 < el.nodes.size(); ++k) {
        tw[k] += 0.5 * el.ds[k];
        tw[k + 1] += 0.5 * el.ds[k];
      }
      LinFunc volt;
      for (std::size_t k = 0; k < el.nodes.size(); ++k)
        volt.phi.emplace_back(el.nodes[k], tw[k] / el.length);
      volt.psi.emplace_back(el.nodes.back(), -el.z / el.length);
      for (const auto& [n, c] : gap_mean_[prev(l)].psi)
        volt.psi.emplace_back(n, el.z / el.length * c);
      voltage_raw_.push_back(std::move(volt));

      // C_l evaluated at every electrode node past the first, for the
      // constancy penalty that realizes membership in the space V
      std::vector<LinFunc> per_node;
      double d = 0.0;
      for (std::size_t k = 1; k < el.nodes.size(); ++k) {
        d += el.ds[k - 1];
        LinFunc f;
        for (std::size_t m = 0; m <= k; ++m) {
          double c = 0.0;
          if (m > 0) c += 0.5 * el.ds[m - 1];
          if (m < k) c += 0.5 * el.ds[m];
          f.phi.emplace_back(el.nodes[m], c / d);
        }
        f.psi.emplace_back(el.nodes[k], -el.z / d);
        for (const auto& [n, c] : gap_mean_[prev(l)].psi)
          f.psi.emplace_back(n, el.z / d * c);
        per_node.push_back(std::move(f));
      }
      electrode_cl_.push_back(std::move(per_node));
    }
  }

  Grid grid_;
  BoundaryLayout boundary_;
  struct Snapped {
    int a = 0, b = 0;  // cycle positions, inclusive
    double z = 0.0, length = 0.0;
    std::vector<int> nodes;  // grid node indices a..b
    std::vector<double> ds;  // edge lengths inside the electrode
  };
  std::vector<Snapped> electrodes_;
  std::vector<std::vector<int>> gap_nodes_;
  std::vector<std::vector<double>> patterns_;
  double sigma_lo_, sigma_hi_;
  double forward_penalty_;
  std::vector<ScalarField> psi0_, phi0_;
  std::vector<LinFunc> gap_mean_, voltage_raw_;
  std::vector<std::vector<LinFunc>> electrode_cl_;
};

}  // namespace invreg
