#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "invreg/ops.hpp"
#include "invreg/problem.hpp"

namespace invreg {

/// Piecewise-linear permeability curve mu(|H|) on a knot grid over
/// [0, H_max], with box bounds and constant extension beyond H_max.
struct PermeabilityCurve {
  std::vector<double> knots;   // increasing, knots.front() = 0
  std::vector<double> values;  // one per knot
  double mu_lo = 0.0, mu_hi = 0.0;

  void validate() const {
    require(knots.size() >= 2 && knots.size() == values.size(),
            "permeability curve: need matching knots/values, at least 2");
    require(knots.front() == 0.0, "permeability curve: knots must start at 0");
    for (std::size_t k = 1; k < knots.size(); ++k)
      require(knots[k] > knots[k - 1], "permeability curve: knots must increase strictly");
    require(mu_lo > 0.0 && mu_lo < mu_hi, "permeability curve: need 0 < mu_lo < mu_hi");
  }

  double eval_raw(double s) const {
    if (s <= knots.front()) return values.front();
    if (s >= knots.back()) return values.back();
    std::size_t k = 1;
    while (knots[k] < s) ++k;
    const double t = (s - knots[k - 1]) / (knots[k] - knots[k - 1]);
    return (1.0 - t) * values[k - 1] + t * values[k];
  }

  /// Piecewise-linear interpolation, clamped to [mu_lo, mu_hi].
  double eval(double s) const { return std::clamp(eval_raw(s), mu_lo, mu_hi); }

  /// Interpolation slope at s; zero outside (knots.front(), knots.back()).
  double slope(double s) const {
    if (s <= knots.front() || s >= knots.back()) return 0.0;
    std::size_t k = 1;
    while (knots[k] < s) ++k;
    return (values[k] - values[k - 1]) / (knots[k] - knots[k - 1]);
  }

  static std::vector<double> uniform_knots(int count, double h_max) {
    require(count >= 2 && h_max > 0.0, "permeability curve: bad knot grid");
    std::vector<double> k(count);
    for (int i = 0; i < count; ++i) k[i] = h_max * i / double(count - 1);
    return k;
  }
};

struct CoilSpec {
  double x0 = 0.375, y0 = 0.375, x1 = 0.625, y1 = 0.625;  // rectangle inside Omega
  double nu_x = 0.0, nu_y = 1.0;                          // unit direction
  double h = 1.0;                                         // coil height (1 in the reduction)

  void validate() const {
    require(x0 < x1 && y0 < y1, "coil: degenerate rectangle");
    require(std::abs(std::hypot(nu_x, nu_y) - 1.0) <= 1e-12, "coil: nu must be a unit vector");
    require(h > 0.0, "coil: height must be positive");
  }
};

struct MagnetSynthesis {
  ObservationVector data;
  std::vector<double> state;  // converged total fields, kernel-state layout
  double trust_lo = 0.0, trust_hi = 0.0;
  double misfit_at_optimum = 0.0;
};

/// Identification of a nonlinear permeability curve from coil flux
/// measurements, in the planar reduction: the magnetic potential A is the
/// out-of-plane component, B = perp_grad(A) is in-plane, and per experiment
///   q_i = sqrt(mu_i) (grad(psi_i) + A^J_i) - (1/sqrt(mu_i)) perp_grad(A_i),
/// with mu_i = mu(|grad(psi_i) + A^J_i|) evaluated per cell.
class MagnetostaticsProblem : public ProblemInstance {
 public:
  MagnetostaticsProblem(const Grid& grid, CoilSpec coil, std::vector<VectorField> impressed,
                        std::vector<double> knots, double mu_lo, double mu_hi)
      : grid_(grid),
        coil_(coil),
        knots_(std::move(knots)),
        mu_lo_(mu_lo),
        mu_hi_(mu_hi) {
    coil_.validate();
    require(mu_lo_ > 0.0 && mu_lo_ < mu_hi_, "magnet: need 0 < mu_lo < mu_hi");
    require(knots_.size() >= 2, "magnet: need at least 2 knots");
    I_ = int(impressed.size());
    require(I_ >= 1, "magnet: need at least one excitation");
    for (auto& a : impressed) {
      require(a.grid == &grid, "magnet: impressed fields must live on the problem grid");
      aj_.push_back(VectorField(grid_));
      aj_.back().x = a.x;
      aj_.back().y = a.y;
    }
    build_coil();
    eval_lo_ = knots_.front();
    eval_hi_ = knots_.back();
  }

  MagnetostaticsProblem(const MagnetostaticsProblem&) = delete;
  MagnetostaticsProblem& operator=(const MagnetostaticsProblem&) = delete;

  const Grid& grid() const { return grid_; }
  int experiment_count() const { return I_; }
  const std::vector<double>& knots() const { return knots_; }
  double coil_area() const { return coil_area_; }

  PermeabilityCurve curve_of(std::span<const double> x) const {
    PermeabilityCurve c;
    c.knots = knots_;
    c.values.assign(x.begin(), x.end());
    c.mu_lo = mu_lo_;
    c.mu_hi = mu_hi_;
    return c;
  }

  /// Restricts the sweep error metric to the |H| range covered by the
  /// reference (synthesis) run; call before run_noise_sweep.
  void set_reference_range(double lo, double hi) {
    require(lo >= 0.0 && hi > lo, "magnet: bad reference range");
    eval_lo_ = lo;
    eval_hi_ = hi;
  }

  /// Impressed field profiles of increasing amplitude: `constant` gives
  /// A^J = amp_i * (1, 0), `vortex` gives amp_i * (-(y-1/2), x-1/2).
  static std::vector<VectorField> excitations(const Grid& g, int I, const std::string& kind,
                                              double base_amplitude) {
    require(I >= 1, "magnet: need at least one excitation");
    std::vector<VectorField> out;
    for (int i = 1; i <= I; ++i) {
      const double amp = base_amplitude * i;
      if (kind == "constant") {
        out.push_back(VectorField::from_function(
            g, [&](double, double) { return std::array<double, 2>{amp, 0.0}; }));
      } else if (kind == "vortex") {
        out.push_back(VectorField::from_function(g, [&](double x, double y) {
          return std::array<double, 2>{-amp * (y - 0.5), amp * (x - 0.5)};
        }));
      } else {
        throw std::invalid_argument("magnet: unknown excitation kind '" + kind + "'");
      }
    }
    return out;
  }

  std::string name() const override { return "magnet"; }
  std::size_t parameter_size() const override { return knots_.size(); }
  std::size_t state_size() const override {
    return std::size_t(I_) * 2 * std::size_t(grid_.n_nodes());
  }

  std::span<const double> a_of(std::span<const double> state, int i) const {
    return state.subspan(std::size_t(i) * 2 * grid_.n_nodes(), grid_.n_nodes());
  }
  std::span<const double> psi_of(std::span<const double> state, int i) const {
    return state.subspan((std::size_t(i) * 2 + 1) * grid_.n_nodes(), grid_.n_nodes());
  }

  /// Coil flux of each magnetic potential, as a labeled data vector.
  ObservationVector observe_state(std::span<const double> state) const {
    ObservationVector y;
    y.values = kernel_observation(state);
    y.blocks.push_back({"fluxes", 0, std::size_t(I_)});
    return y;
  }

  std::vector<double> data_lift(const ObservationVector& y) const override {
    require(y.size() == std::size_t(I_), "magnet: data vector must have one flux per experiment");
    std::vector<double> state(state_size(), 0.0);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      const double c = coil_.h * y.values[i] / coil_area_;
      double* a = state.data() + std::size_t(i) * 2 * nn;
      for (int jj = 0; jj <= grid_.ny; ++jj)
        for (int ii = 0; ii <= grid_.nx; ++ii) {
          const int n = grid_.node_index(ii, jj);
          if (grid_.node_active[n])
            a[n] = c * (coil_.nu_y * grid_.node_x(ii) - coil_.nu_x * grid_.node_y(jj));
        }
      // psi component of the right inverse is zero
    }
    return state;
  }

  double misfit_total(std::span<const double> x, std::span<const double> u) const override {
    double s = 0.0;
    for (int i = 0; i < I_; ++i) s += 0.5 * l2_norm_sq(residual_field(x, u, i));
    return s;
  }

  VectorField residual_field(std::span<const double> x, std::span<const double> u,
                             int i) const {
    const PermeabilityCurve curve = curve_of(x);
    ScalarField a(grid_), psi(grid_);
    std::copy_n(a_of(u, i).data(), grid_.n_nodes(), a.v.data());
    std::copy_n(psi_of(u, i).data(), grid_.n_nodes(), psi.v.data());
    const VectorField gpsi = gradient(psi), b = perp_gradient(a);
    VectorField q(grid_);
    for (int c = 0; c < grid_.n_cells(); ++c) {
      if (!grid_.cell_active[c]) continue;
      const double hx = gpsi.x[c] + aj_[i].x[c], hy = gpsi.y[c] + aj_[i].y[c];
      const double raw = curve.eval_raw(std::hypot(hx, hy));
      require(raw > 0.5 * mu_lo_, "magnet: corrupt permeability curve (mu below mu_lo/2)");
      const double mu = std::clamp(raw, mu_lo_, mu_hi_);
      fosls_combine(mu, hx, hy, b.x[c], b.y[c], q.x[c], q.y[c]);
    }
    return q;
  }

  void misfit_total_gradient(std::span<const double> x, std::span<const double> u,
                             std::span<double> gx, std::span<double> gu) const override {
    const PermeabilityCurve curve = curve_of(x);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField a(grid_), psi(grid_);
      std::copy_n(a_of(u, i).data(), nn, a.v.data());
      std::copy_n(psi_of(u, i).data(), nn, psi.v.data());
      const VectorField gpsi = gradient(psi), b = perp_gradient(a);
      VectorField tpsi(grid_), ta(grid_);
      for (int c = 0; c < grid_.n_cells(); ++c) {
        if (!grid_.cell_active[c]) continue;
        const double hx = gpsi.x[c] + aj_[i].x[c], hy = gpsi.y[c] + aj_[i].y[c];
        const double s = std::hypot(hx, hy);
        const double raw = curve.eval_raw(s);
        require(raw > 0.5 * mu_lo_, "magnet: corrupt permeability curve (mu below mu_lo/2)");
        const double mu = std::clamp(raw, mu_lo_, mu_hi_);
        double qx, qy;
        fosls_combine(mu, hx, hy, b.x[c], b.y[c], qx, qy);
        const double r = std::sqrt(mu);
        const double area = grid_.cell_area();

        // d q / d mu = H / (2 sqrt(mu)) + B / (2 mu^{3/2})
        const double dq_dmu =
            (qx * hx + qy * hy) / (2.0 * r) + (qx * b.x[c] + qy * b.y[c]) / (2.0 * mu * r);
        const bool pass = raw >= mu_lo_ && raw <= mu_hi_;  // clamp blocks the derivative

        if (pass) {
          // knot sensitivities through the interpolation hat weights
          int k1 = 0;
          double w0 = 1.0, w1 = 0.0;
          hat_weights(s, k1, w0, w1);
          gx[k1] += area * dq_dmu * w0;
          if (w1 != 0.0) gx[k1 + 1] += area * dq_dmu * w1;
        }

        // state sensitivities: direct H term plus the mu'(|H|) pathway
        double tx = r * qx, ty = r * qy;
        if (pass && s > 1e-14) {
          const double slope = curve.slope(s);
          if (slope != 0.0) {
            const double f = dq_dmu * slope / s;
            tx += f * hx;
            ty += f * hy;
          }
        }
        tpsi.x[c] = area * tx;
        tpsi.y[c] = area * ty;
        ta.x[c] = -area * qx / r;
        ta.y[c] = -area * qy / r;
      }
      add_perp_grad_adjoint(ta, 1.0, gu.subspan(std::size_t(i) * 2 * nn, nn));
      add_grad_adjoint(tpsi, 1.0, gu.subspan((std::size_t(i) * 2 + 1) * nn, nn));
    }
  }

  double regularizer(std::span<const double>, std::span<const double> u) const override {
    double s = 0.0;
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      ScalarField f(grid_);
      std::copy_n(a_of(u, i).data(), nn, f.v.data());
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
      std::copy_n(a_of(u, i).data(), nn, f.v.data());
      add_smooth_norm_grad(f, 0.5, gu.subspan(std::size_t(i) * 2 * nn, nn));
      std::copy_n(psi_of(u, i).data(), nn, f.v.data());
      add_smooth_norm_grad(f, 0.5, gu.subspan((std::size_t(i) * 2 + 1) * nn, nn));
    }
  }

  std::vector<double> kernel_observation(std::span<const double> u) const override {
    std::vector<double> out(std::size_t(I_), 0.0);
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      const double* a = u.data() + std::size_t(i) * 2 * nn;
      double s = 0.0;
      for (const auto& [n, c] : flux_coeff_) s += c * a[n];
      out[i] = s;
    }
    return out;
  }

  void kernel_observation_adjoint(std::span<const double> w,
                                  std::span<double> gu) const override {
    const int nn = grid_.n_nodes();
    for (int i = 0; i < I_; ++i) {
      double* ga = gu.data() + std::size_t(i) * 2 * nn;
      for (const auto& [n, c] : flux_coeff_) ga[n] += w[i] * c;
    }
  }

  double constraint_functional(std::span<const double> x,
                               std::span<const double>) const override {
    const double mid = 0.5 * (mu_lo_ + mu_hi_);
    double m = 0.0;
    for (double v : x) m = std::max(m, std::abs(v - mid));
    return m;
  }

  bool constraint_is_box() const override { return true; }

  void project_parameters(std::span<double> x, double rho) const override {
    const double mid = 0.5 * (mu_lo_ + mu_hi_);
    const double half = std::max(0.0, std::min(rho, 0.5 * (mu_hi_ - mu_lo_)));
    for (double& v : x) v = std::clamp(v, mid - half, mid + half);
  }

  std::vector<double> lift_residual_norms(std::span<const double> x,
                                          std::span<const double> u_hat,
                                          const ObservationVector& z) const override {
    const PermeabilityCurve curve = curve_of(x);
    const int nn = grid_.n_nodes();
    std::vector<double> norms(std::size_t(I_), 0.0);
    const std::vector<double> lift = data_lift(z);
    for (int i = 0; i < I_; ++i) {
      if (z.values[i] == 0.0) continue;
      ScalarField psi(grid_), alift(grid_);
      std::copy_n(psi_of(u_hat, i).data(), nn, psi.v.data());
      std::copy_n(lift.data() + std::size_t(i) * 2 * nn, nn, alift.v.data());
      const VectorField gpsi = gradient(psi), bl = perp_gradient(alift);
      double s = 0.0;
      for (int c = 0; c < grid_.n_cells(); ++c) {
        if (!grid_.cell_active[c]) continue;
        const double hx = gpsi.x[c] + aj_[i].x[c], hy = gpsi.y[c] + aj_[i].y[c];
        const double mu = curve.eval(std::hypot(hx, hy));
        s += grid_.cell_area() * (bl.x[c] * bl.x[c] + bl.y[c] * bl.y[c]) / mu;
      }
      norms[i] = std::sqrt(s);
    }
    return norms;
  }

  double b_norm(std::span<const double> x, std::span<const double> u) const override {
    const PermeabilityCurve curve = curve_of(x);
    const int nn = grid_.n_nodes();
    double sup = 0.0, smooth = 0.0;
    for (int i = 0; i < I_; ++i) {
      ScalarField psi(grid_), f(grid_);
      std::copy_n(psi_of(u, i).data(), nn, psi.v.data());
      const VectorField gpsi = gradient(psi);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c]) {
          const double hx = gpsi.x[c] + aj_[i].x[c], hy = gpsi.y[c] + aj_[i].y[c];
          sup = std::max(sup, curve.eval(std::hypot(hx, hy)));
        }
      std::copy_n(a_of(u, i).data(), nn, f.v.data());
      smooth += smooth_norm_sq(f);
      smooth += smooth_norm_sq(psi);
    }
    return sup + std::sqrt(smooth) + norm2(kernel_observation(u));
  }

  /// Relative L2 distance of the interpolated curves over the reference
  /// |H| range (the trust region of the synthesis run).
  double parameter_distance(std::span<const double> x,
                            std::span<const double> x_ref) const override {
    const PermeabilityCurve a = curve_of(x), b = curve_of(x_ref);
    const int samples = 201;
    double num = 0.0, den = 0.0;
    for (int j = 0; j < samples; ++j) {
      const double s = eval_lo_ + (eval_hi_ - eval_lo_) * j / double(samples - 1);
      const double d = a.eval(s) - b.eval(s);
      num += d * d;
      den += b.eval(s) * b.eval(s);
    }
    return std::sqrt(num / den);
  }

  std::vector<double> initial_parameters() const override {
    return std::vector<double>(knots_.size(), 0.5 * (mu_lo_ + mu_hi_));
  }

  /// Knots whose hat support covers some attained |H| value of the state.
  std::vector<bool> knots_in_trust_region(double lo, double hi) const {
    std::vector<bool> in(knots_.size(), false);
    for (std::size_t k = 0; k < knots_.size(); ++k) {
      const double left = k == 0 ? knots_.front() : knots_[k - 1];
      const double right = k + 1 == knots_.size() ? knots_.back() : knots_[k + 1];
      in[k] = right >= lo && left <= hi;
      if (k + 1 == knots_.size() && hi >= knots_.back()) in[k] = true;
    }
    return in;
  }

  /// Covered |H| interval of a state (union over experiments and cells).
  std::pair<double, double> trust_region(std::span<const double> u) const {
    const int nn = grid_.n_nodes();
    double lo = std::numeric_limits<double>::max(), hi = 0.0;
    for (int i = 0; i < I_; ++i) {
      ScalarField psi(grid_);
      std::copy_n(psi_of(u, i).data(), nn, psi.v.data());
      const VectorField gpsi = gradient(psi);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c]) {
          const double s =
              std::hypot(gpsi.x[c] + aj_[i].x[c], gpsi.y[c] + aj_[i].y[c]);
          lo = std::min(lo, s);
          hi = std::max(hi, s);
        }
    }
    return {lo, hi};
  }

  /// Manufactures flux data for a given curve: per experiment, solves the
  /// nonlinear first-order system by freezing mu on the current iterate and
  /// minimizing the resulting quadratic over the total potentials (pinned to
  /// zero on the boundary), repeated until the mu field settles.
  MagnetSynthesis synthesize(std::span<const double> true_values) const {
    const PermeabilityCurve curve = curve_of(std::vector<double>(true_values.begin(),
                                                                 true_values.end()));
    curve.validate();
    const int nn = grid_.n_nodes();
    MagnetSynthesis out;
    out.state.assign(state_size(), 0.0);
    out.trust_lo = std::numeric_limits<double>::max();

    for (int i = 0; i < I_; ++i) {
      std::vector<int> free_dof;  // a entries 0..nn-1, psi entries nn..2nn-1
      for (int n = 0; n < nn; ++n)
        if (grid_.node_interior[n]) {
          free_dof.push_back(n);
          free_dof.push_back(nn + n);
        }

      std::vector<double> mu_cells(std::size_t(grid_.n_cells()), 0.0);
      auto update_mu = [&](const ScalarField& psi, double* change) {
        const VectorField gpsi = gradient(psi);
        double ch = 0.0;
        for (int c = 0; c < grid_.n_cells(); ++c) {
          if (!grid_.cell_active[c]) continue;
          const double mu = curve.eval(
              std::hypot(gpsi.x[c] + aj_[i].x[c], gpsi.y[c] + aj_[i].y[c]));
          ch = std::max(ch, std::abs(mu - mu_cells[c]));
          mu_cells[c] = mu;
        }
        if (change) *change = ch;
      };

      ScalarField a(grid_), psi(grid_);
      update_mu(psi, nullptr);

      auto grad_q = [&](const ScalarField& af, const ScalarField& pf, std::vector<double>& ga,
                        std::vector<double>& gp) {
        ga.assign(std::size_t(nn), 0.0);
        gp.assign(std::size_t(nn), 0.0);
        const VectorField gpsi = gradient(pf), b = perp_gradient(af);
        VectorField tp(grid_), tA(grid_);
        for (int c = 0; c < grid_.n_cells(); ++c) {
          if (!grid_.cell_active[c]) continue;
          const double hx = gpsi.x[c] + aj_[i].x[c], hy = gpsi.y[c] + aj_[i].y[c];
          double qx, qy;
          fosls_combine(mu_cells[c], hx, hy, b.x[c], b.y[c], qx, qy);
          const double r = std::sqrt(mu_cells[c]);
          tp.x[c] = grid_.cell_area() * r * qx;
          tp.y[c] = grid_.cell_area() * r * qy;
          tA.x[c] = -grid_.cell_area() * qx / r;
          tA.y[c] = -grid_.cell_area() * qy / r;
        }
        add_grad_adjoint(tp, 1.0, gp);
        add_perp_grad_adjoint(tA, 1.0, ga);
      };

      std::vector<double> ga0, gp0, ga, gp;
      for (int outer = 0; outer < 50; ++outer) {
        ScalarField zero(grid_);
        grad_q(zero, zero, ga0, gp0);
        std::vector<double> b(free_dof.size());
        for (std::size_t k = 0; k < free_dof.size(); ++k) {
          const int d = free_dof[k];
          b[k] = -(d < nn ? ga0[d] : gp0[d - nn]);
        }
        ScalarField at(grid_), pt(grid_);
        auto apply = [&](const std::vector<double>& z, std::vector<double>& az) {
          std::fill(at.v.begin(), at.v.end(), 0.0);
          std::fill(pt.v.begin(), pt.v.end(), 0.0);
          for (std::size_t k = 0; k < free_dof.size(); ++k) {
            const int d = free_dof[k];
            (d < nn ? at.v[d] : pt.v[d - nn]) = z[k];
          }
          grad_q(at, pt, ga, gp);
          for (std::size_t k = 0; k < free_dof.size(); ++k) {
            const int d = free_dof[k];
            az[k] = (d < nn ? ga[d] : gp[d - nn]) - (d < nn ? ga0[d] : gp0[d - nn]);
          }
        };
        std::vector<double> z;
        const CgResult cg = conjugate_gradient(apply, b, z, 30000, 1e-11);
        if (!cg.converged)
          throw std::runtime_error("magnet forward solve non-convergence: experiment " +
                                   std::to_string(i) + ", residual " +
                                   format_double(cg.residual));
        std::fill(a.v.begin(), a.v.end(), 0.0);
        std::fill(psi.v.begin(), psi.v.end(), 0.0);
        for (std::size_t k = 0; k < free_dof.size(); ++k) {
          const int d = free_dof[k];
          (d < nn ? a.v[d] : psi.v[d - nn]) = z[k];
        }
        double change = 0.0;
        update_mu(psi, &change);
        if (change <= 1e-12 * mu_hi_) break;
      }

      double* sa = out.state.data() + std::size_t(i) * 2 * nn;
      std::copy_n(a.v.data(), nn, sa);
      std::copy_n(psi.v.data(), nn, sa + nn);

      const VectorField gpsi = gradient(psi);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c]) {
          const double s = std::hypot(gpsi.x[c] + aj_[i].x[c], gpsi.y[c] + aj_[i].y[c]);
          out.trust_lo = std::min(out.trust_lo, s);
          out.trust_hi = std::max(out.trust_hi, s);
        }
    }

    out.data = observe_state(out.state);
    out.misfit_at_optimum =
        misfit_total(std::vector<double>(true_values.begin(), true_values.end()), out.state);
    return out;
  }

 private:
  void build_coil() {
    std::vector<std::uint8_t> in_coil(std::size_t(grid_.n_cells()), 0);
    int count = 0;
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const int c = grid_.cell_index(i, j);
        if (!grid_.cell_active[c]) continue;
        const double x = grid_.cell_cx(i), y = grid_.cell_cy(j);
        if (x > coil_.x0 && x < coil_.x1 && y > coil_.y0 && y < coil_.y1) {
          in_coil[c] = 1;
          ++count;
        }
      }
    require(count > 0, "magnet: coil rectangle contains no active cells");
    coil_area_ = count * grid_.cell_area();

    // flux(A) = (1/h) sum_{coil cells} perp_grad(A) . nu * cell_area
    //         = <G, grad A>_cells with G = (nu_y, -nu_x)/h on the coil
    VectorField G(grid_);
    for (int c = 0; c < grid_.n_cells(); ++c)
      if (in_coil[c]) {
        G.x[c] = coil_.nu_y / coil_.h;
        G.y[c] = -coil_.nu_x / coil_.h;
      }
    std::vector<double> coeff(std::size_t(grid_.n_nodes()), 0.0);
    add_grad_adjoint(G, 1.0, coeff);
    for (int n = 0; n < grid_.n_nodes(); ++n)
      if (coeff[n] != 0.0) flux_coeff_.emplace_back(n, coeff[n]);
  }

  void hat_weights(double s, int& k, double& w0, double& w1) const {
    if (s <= knots_.front()) {
      k = 0;
      w0 = 1.0;
      w1 = 0.0;
      return;
    }
    if (s >= knots_.back()) {
      k = int(knots_.size()) - 1;
      w0 = 1.0;
      w1 = 0.0;
      return;
    }
    std::size_t j = 1;
    while (knots_[j] < s) ++j;
    const double t = (s - knots_[j - 1]) / (knots_[j] - knots_[j - 1]);
    k = int(j) - 1;
    w0 = 1.0 - t;
    w1 = t;
  }

  Grid grid_;
  CoilSpec coil_;
  std::vector<VectorField> aj_;
  std::vector<double> knots_;
  double mu_lo_, mu_hi_;
  double coil_area_ = 0.0;
  double eval_lo_ = 0.0, eval_hi_ = 1.0;
  std::vector<std::pair<int, double>> flux_coeff_;
  int I_ = 0;
};

}  // namespace invreg
