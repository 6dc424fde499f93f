#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "invreg/ops.hpp"
#include "invreg/problem.hpp"

namespace invreg {

struct AcousticConstants {
  double rho0 = 1.0;   // mean density
  double c0 = 1.0;     // sound speed
  double omega = 8.0;  // angular frequency
  double kappa = 1.0;  // absorbing-wall impedance constant, typically c0

  void validate() const {
    require(rho0 > 0.0 && c0 > 0.0 && omega > 0.0 && kappa > 0.0,
            "acoustic constants must all be positive");
  }
};

struct MicArray {
  std::vector<std::array<double, 2>> points;
  double bump_radius = 0.0;  // 0 selects an automatic radius

  /// L equally spaced microphones on a circle.
  static MicArray ring(int L, double radius = 0.18, double cx = 0.5, double cy = 0.5) {
    require(L >= 1, "mic array: need at least one microphone");
    MicArray m;
    for (int l = 0; l < L; ++l) {
      const double t = 2.0 * M_PI * l / L;
      m.points.push_back({cx + radius * std::cos(t), cy + radius * std::sin(t)});
    }
    return m;
  }
};

/// Quartic bump profile (1 - (d/r)^2)^2 inside radius r, zero outside.
inline double bump_profile(double dist, double radius) {
  if (dist >= radius) return 0.0;
  const double t = 1.0 - (dist / radius) * (dist / radius);
  return t * t;
}

struct AcousticSynthesis {
  ObservationVector data;
  std::vector<double> state;  // converged total fields, kernel-state layout
  double misfit_at_optimum = 0.0;
};

/// Time-harmonic sound-source localization from microphone point values of
/// the pressure. The model is the first-order real/imaginary Helmholtz
/// system; sources (f_re, f_im, g_re, g_im) are supported away from the
/// measurement subdomain, the right inverse lifts the data by compactly
/// supported bumps centred at the (node-snapped) microphones, and the
/// impedance/rigid wall conditions enter Q_E as weight-1 boundary penalties.
class AcousticsProblem : public ProblemInstance {
 public:
  AcousticsProblem(const Grid& grid, const MicArray& mics, AcousticConstants constants,
                   std::vector<int> rigid_sides = {})
      : grid_(grid), constants_(constants) {
    constants_.validate();
    require(grid_.domain == Grid::Domain::unit_square,
            "acoustics: only the unit square domain is supported");
    snap_mics(mics);
    build_measurement_region();
    build_bumps();
    build_boundary_faces(rigid_sides);
  }

  AcousticsProblem(const AcousticsProblem&) = delete;
  AcousticsProblem& operator=(const AcousticsProblem&) = delete;

  const Grid& grid() const { return grid_; }
  const AcousticConstants& constants() const { return constants_; }
  int mic_count() const { return L_; }
  int mic_node(int l) const { return mic_nodes_[l]; }
  double bump_radius() const { return radius_; }
  const ScalarField& bump(int l) const { return bumps_[l]; }
  bool cell_in_measurement_region(int c) const { return ms_cell_[c]; }
  bool node_in_measurement_region(int n) const { return ms_node_[n]; }

  std::string name() const override { return "acoustic"; }

  // parameter layout: f_re (2 cell blocks), f_im (2), g_re (nodes), g_im (nodes)
  std::size_t parameter_size() const override {
    return 4 * std::size_t(grid_.n_cells()) + 2 * std::size_t(grid_.n_nodes());
  }
  // state layout: p_re, p_im (nodes), v_re (2 cell blocks), v_im (2)
  std::size_t state_size() const override {
    return 2 * std::size_t(grid_.n_nodes()) + 4 * std::size_t(grid_.n_cells());
  }

  std::span<const double> f_re(std::span<const double> x) const {
    return x.subspan(0, 2 * std::size_t(grid_.n_cells()));
  }
  std::span<const double> f_im(std::span<const double> x) const {
    return x.subspan(2 * std::size_t(grid_.n_cells()), 2 * std::size_t(grid_.n_cells()));
  }
  std::span<const double> g_re(std::span<const double> x) const {
    return x.subspan(4 * std::size_t(grid_.n_cells()), std::size_t(grid_.n_nodes()));
  }
  std::span<const double> g_im(std::span<const double> x) const {
    return x.subspan(4 * std::size_t(grid_.n_cells()) + std::size_t(grid_.n_nodes()),
                     std::size_t(grid_.n_nodes()));
  }
  std::span<const double> p_re(std::span<const double> u) const {
    return u.subspan(0, std::size_t(grid_.n_nodes()));
  }
  std::span<const double> p_im(std::span<const double> u) const {
    return u.subspan(std::size_t(grid_.n_nodes()), std::size_t(grid_.n_nodes()));
  }
  std::span<const double> v_re(std::span<const double> u) const {
    return u.subspan(2 * std::size_t(grid_.n_nodes()), 2 * std::size_t(grid_.n_cells()));
  }
  std::span<const double> v_im(std::span<const double> u) const {
    return u.subspan(2 * std::size_t(grid_.n_nodes()) + 2 * std::size_t(grid_.n_cells()),
                     2 * std::size_t(grid_.n_cells()));
  }

  /// Interleaved (re, im) pressure point values as a labeled data vector.
  ObservationVector observe_state(std::span<const double> state) const {
    ObservationVector y;
    y.values = kernel_observation(state);
    y.blocks.push_back({"pressures", 0, std::size_t(2 * L_)});
    return y;
  }

  std::vector<double> data_lift(const ObservationVector& y) const override {
    require(y.size() == std::size_t(2 * L_),
            "acoustic: data vector length must be 2L (interleaved re/im)");
    std::vector<double> state(state_size(), 0.0);
    const int nn = grid_.n_nodes();
    for (int l = 0; l < L_; ++l) {
      const double yre = y.values[2 * l], yim = y.values[2 * l + 1];
      for (const auto& [n, b] : bump_support_[l]) {
        state[n] += yre * b;
        state[nn + n] += yim * b;
      }
    }
    return state;
  }

  struct ResidualFields {
    VectorField q1, q2;   // momentum residuals (cells)
    ScalarField q3, q4;   // mass residuals (interior nodes)
    std::vector<double> bc_re, bc_im;  // boundary-condition residual per face
  };

  ResidualFields residual(std::span<const double> x, std::span<const double> u) const {
    ResidualFields r{VectorField(grid_), VectorField(grid_), ScalarField(grid_),
                     ScalarField(grid_), {}, {}};
    const double rho0 = constants_.rho0, w = constants_.omega, c0 = constants_.c0;

    ScalarField pre(grid_), pim(grid_);
    std::copy_n(p_re(u).data(), grid_.n_nodes(), pre.v.data());
    std::copy_n(p_im(u).data(), grid_.n_nodes(), pim.v.data());
    VectorField vre = unpack_cells(v_re(u)), vim = unpack_cells(v_im(u));
    const VectorField gre = gradient(pre), gim = gradient(pim);
    const ScalarField dre = divergence(vre), dim = divergence(vim);

    for (int c = 0; c < grid_.n_cells(); ++c) {
      if (!grid_.cell_active[c]) continue;
      r.q1.x[c] = -rho0 * w * vim.x[c] + gre.x[c] - f_re(x)[c];
      r.q1.y[c] = -rho0 * w * vim.y[c] + gre.y[c] - f_re(x)[grid_.n_cells() + c];
      r.q2.x[c] = rho0 * w * vre.x[c] + gim.x[c] - f_im(x)[c];
      r.q2.y[c] = rho0 * w * vre.y[c] + gim.y[c] - f_im(x)[grid_.n_cells() + c];
    }
    for (int n = 0; n < grid_.n_nodes(); ++n) {
      if (!grid_.node_interior[n]) continue;
      r.q3.v[n] = -(w / (c0 * c0)) * pim.v[n] + rho0 * dre.v[n] - g_re(x)[n];
      r.q4.v[n] = (w / (c0 * c0)) * pre.v[n] + rho0 * dim.v[n] - g_im(x)[n];
    }
    r.bc_re.resize(faces_.size());
    r.bc_im.resize(faces_.size());
    for (std::size_t e = 0; e < faces_.size(); ++e) {
      const Face& f = faces_[e];
      const double pre_face = 0.5 * (pre.v[f.n0] + pre.v[f.n1]);
      const double pim_face = 0.5 * (pim.v[f.n0] + pim.v[f.n1]);
      const double vre_n = vre.x[f.cell] * f.nx + vre.y[f.cell] * f.ny;
      const double vim_n = vim.x[f.cell] * f.nx + vim.y[f.cell] * f.ny;
      const double k = f.absorbing ? constants_.kappa : 0.0;
      r.bc_re[e] = rho0 * vre_n + k * pre_face;
      r.bc_im[e] = rho0 * vim_n + k * pim_face;
    }
    return r;
  }

  double misfit_total(std::span<const double> x, std::span<const double> u) const override {
    const ResidualFields r = residual(x, u);
    double s = 0.5 * (l2_norm_sq(r.q1) + l2_norm_sq(r.q2) + l2_norm_sq(r.q3) +
                      l2_norm_sq(r.q4));
    for (std::size_t e = 0; e < faces_.size(); ++e)
      s += 0.5 * faces_[e].length * (r.bc_re[e] * r.bc_re[e] + r.bc_im[e] * r.bc_im[e]);
    return s;
  }

  void misfit_total_gradient(std::span<const double> x, std::span<const double> u,
                             std::span<double> gx, std::span<double> gu) const override {
    const ResidualFields r = residual(x, u);
    const double rho0 = constants_.rho0, w = constants_.omega, c0 = constants_.c0;
    const int nn = grid_.n_nodes(), nc = grid_.n_cells();
    const double area = grid_.cell_area();

    std::span<double> gfre = gx.subspan(0, 2 * std::size_t(nc));
    std::span<double> gfim = gx.subspan(2 * std::size_t(nc), 2 * std::size_t(nc));
    std::span<double> ggre = gx.subspan(4 * std::size_t(nc), std::size_t(nn));
    std::span<double> ggim = gx.subspan(4 * std::size_t(nc) + nn, std::size_t(nn));
    std::span<double> gpre = gu.subspan(0, std::size_t(nn));
    std::span<double> gpim = gu.subspan(std::size_t(nn), std::size_t(nn));
    std::span<double> gvre = gu.subspan(2 * std::size_t(nn), 2 * std::size_t(nc));
    std::span<double> gvim = gu.subspan(2 * std::size_t(nn) + 2 * std::size_t(nc),
                                        2 * std::size_t(nc));

    VectorField wq1(grid_), wq2(grid_);
    for (int c = 0; c < nc; ++c) {
      if (!grid_.cell_active[c]) continue;
      wq1.x[c] = area * r.q1.x[c];
      wq1.y[c] = area * r.q1.y[c];
      wq2.x[c] = area * r.q2.x[c];
      wq2.y[c] = area * r.q2.y[c];
      // sources enter with a minus sign
      gfre[c] -= wq1.x[c];
      gfre[nc + c] -= wq1.y[c];
      gfim[c] -= wq2.x[c];
      gfim[nc + c] -= wq2.y[c];
      // zeroth-order velocity coupling in the momentum residuals
      gvim[c] += -rho0 * w * wq1.x[c];
      gvim[nc + c] += -rho0 * w * wq1.y[c];
      gvre[c] += rho0 * w * wq2.x[c];
      gvre[nc + c] += rho0 * w * wq2.y[c];
    }
    add_grad_adjoint(wq1, 1.0, gpre);
    add_grad_adjoint(wq2, 1.0, gpim);

    ScalarField wq3(grid_), wq4(grid_);
    for (int n = 0; n < nn; ++n) {
      if (!grid_.node_interior[n]) continue;
      wq3.v[n] = grid_.node_weight[n] * r.q3.v[n];
      wq4.v[n] = grid_.node_weight[n] * r.q4.v[n];
      ggre[n] -= wq3.v[n];
      ggim[n] -= wq4.v[n];
      gpim[n] += -(w / (c0 * c0)) * wq3.v[n];
      gpre[n] += (w / (c0 * c0)) * wq4.v[n];
    }
    // d/dv of <q, div v>_nodes = -cell_area * grad(q) by exact adjointness;
    // the node weights are part of the inner product, so q enters unweighted
    const VectorField g3 = gradient(r.q3), g4 = gradient(r.q4);
    for (int c = 0; c < nc; ++c) {
      if (!grid_.cell_active[c]) continue;
      gvre[c] += -rho0 * area * g3.x[c];
      gvre[nc + c] += -rho0 * area * g3.y[c];
      gvim[c] += -rho0 * area * g4.x[c];
      gvim[nc + c] += -rho0 * area * g4.y[c];
    }

    for (std::size_t e = 0; e < faces_.size(); ++e) {
      const Face& f = faces_[e];
      const double k = f.absorbing ? constants_.kappa : 0.0;
      const double wre = faces_[e].length * r.bc_re[e];
      const double wim = faces_[e].length * r.bc_im[e];
      gvre[f.cell] += rho0 * wre * f.nx;
      gvre[nc + f.cell] += rho0 * wre * f.ny;
      gvim[f.cell] += rho0 * wim * f.nx;
      gvim[nc + f.cell] += rho0 * wim * f.ny;
      if (k != 0.0) {
        gpre[f.n0] += 0.5 * k * wre;
        gpre[f.n1] += 0.5 * k * wre;
        gpim[f.n0] += 0.5 * k * wim;
        gpim[f.n1] += 0.5 * k * wim;
      }
    }
  }

  double regularizer(std::span<const double> x, std::span<const double> u) const override {
    double s = 0.0;
    s += 0.5 * cell_pair_norm_sq(f_re(x)) + 0.5 * cell_pair_norm_sq(f_im(x));
    s += 0.5 * node_norm_sq(g_re(x)) + 0.5 * node_norm_sq(g_im(x));
    s += 0.5 * node_norm_sq(p_re(u)) + 0.5 * node_norm_sq(p_im(u));
    s += 0.5 * cell_pair_norm_sq(v_re(u)) + 0.5 * cell_pair_norm_sq(v_im(u));
    return s;
  }

  void regularizer_gradient(std::span<const double> x, std::span<const double> u,
                            std::span<double> gx, std::span<double> gu) const override {
    const int nn = grid_.n_nodes(), nc = grid_.n_cells();
    auto cells = [&](std::span<const double> v, std::span<double> g) {
      for (int c = 0; c < nc; ++c)
        if (grid_.cell_active[c]) {
          g[c] += grid_.cell_area() * v[c];
          g[nc + c] += grid_.cell_area() * v[nc + c];
        }
    };
    auto nodes = [&](std::span<const double> v, std::span<double> g) {
      for (int n = 0; n < nn; ++n) g[n] += grid_.node_weight[n] * v[n];
    };
    cells(f_re(x), gx.subspan(0, 2 * std::size_t(nc)));
    cells(f_im(x), gx.subspan(2 * std::size_t(nc), 2 * std::size_t(nc)));
    nodes(g_re(x), gx.subspan(4 * std::size_t(nc), std::size_t(nn)));
    nodes(g_im(x), gx.subspan(4 * std::size_t(nc) + nn, std::size_t(nn)));
    nodes(p_re(u), gu.subspan(0, std::size_t(nn)));
    nodes(p_im(u), gu.subspan(std::size_t(nn), std::size_t(nn)));
    cells(v_re(u), gu.subspan(2 * std::size_t(nn), 2 * std::size_t(nc)));
    cells(v_im(u), gu.subspan(2 * std::size_t(nn) + 2 * std::size_t(nc), 2 * std::size_t(nc)));
  }

  std::vector<double> kernel_observation(std::span<const double> u) const override {
    std::vector<double> out(std::size_t(2 * L_), 0.0);
    for (int l = 0; l < L_; ++l) {
      out[2 * l] = p_re(u)[mic_nodes_[l]];
      out[2 * l + 1] = p_im(u)[mic_nodes_[l]];
    }
    return out;
  }

  void kernel_observation_adjoint(std::span<const double> w,
                                  std::span<double> gu) const override {
    const int nn = grid_.n_nodes();
    for (int l = 0; l < L_; ++l) {
      gu[mic_nodes_[l]] += w[2 * l];
      gu[nn + mic_nodes_[l]] += w[2 * l + 1];
    }
  }

  /// Discrete Radon-norm surrogate: area-weighted L1 norm of div(f_re/im)
  /// and of both components of grad(g_re/im).
  double sparsity_norm(std::span<const double> x) const {
    double s = 0.0;
    for (std::span<const double> f : {f_re(x), f_im(x)}) {
      const ScalarField d = divergence(unpack_cells(f));
      for (int n = 0; n < grid_.n_nodes(); ++n) s += grid_.node_weight[n] * std::abs(d.v[n]);
    }
    for (std::span<const double> g : {g_re(x), g_im(x)}) {
      ScalarField gf(grid_);
      std::copy_n(g.data(), grid_.n_nodes(), gf.v.data());
      const VectorField gr = gradient(gf);
      for (int c = 0; c < grid_.n_cells(); ++c)
        if (grid_.cell_active[c])
          s += grid_.cell_area() * (std::abs(gr.x[c]) + std::abs(gr.y[c]));
    }
    return s;
  }

  double constraint_functional(std::span<const double> x,
                               std::span<const double>) const override {
    return sparsity_norm(x);
  }

  bool constraint_is_box() const override { return false; }

  void constraint_subgradient(std::span<const double> x, std::span<const double>,
                              std::span<double> gx) const override {
    const int nn = grid_.n_nodes(), nc = grid_.n_cells();
    const std::size_t off_f[2] = {0, 2 * std::size_t(nc)};
    for (int part = 0; part < 2; ++part) {
      const std::span<const double> f = part == 0 ? f_re(x) : f_im(x);
      ScalarField sgn(grid_);
      const ScalarField d = divergence(unpack_cells(f));
      for (int n = 0; n < nn; ++n)
        sgn.v[n] = d.v[n] > 0.0 ? 1.0 : (d.v[n] < 0.0 ? -1.0 : 0.0);
      // d <sgn, div f>_nodes / d f = -cell_area * grad(sgn)
      const VectorField gs = gradient(sgn);
      std::span<double> g = gx.subspan(off_f[part], 2 * std::size_t(nc));
      for (int c = 0; c < nc; ++c)
        if (grid_.cell_active[c]) {
          g[c] += -grid_.cell_area() * gs.x[c];
          g[nc + c] += -grid_.cell_area() * gs.y[c];
        }
    }
    const std::size_t off_g[2] = {4 * std::size_t(nc), 4 * std::size_t(nc) + std::size_t(nn)};
    for (int part = 0; part < 2; ++part) {
      const std::span<const double> gsrc = part == 0 ? g_re(x) : g_im(x);
      ScalarField gf(grid_);
      std::copy_n(gsrc.data(), nn, gf.v.data());
      const VectorField gr = gradient(gf);
      VectorField sgn(grid_);
      for (int c = 0; c < nc; ++c)
        if (grid_.cell_active[c]) {
          sgn.x[c] = gr.x[c] > 0.0 ? 1.0 : (gr.x[c] < 0.0 ? -1.0 : 0.0);
          sgn.y[c] = gr.y[c] > 0.0 ? 1.0 : (gr.y[c] < 0.0 ? -1.0 : 0.0);
        }
      add_grad_adjoint(sgn, 1.0, gx.subspan(off_g[part], std::size_t(nn)));
    }
  }

  /// Zeros the sources on the measurement subdomain (support constraint by
  /// construction); rho plays no role here, the sparsity bound is penalized.
  void project_parameters(std::span<double> x, double) const override {
    const int nn = grid_.n_nodes(), nc = grid_.n_cells();
    for (int c = 0; c < nc; ++c)
      if (!grid_.cell_active[c] || ms_cell_[c]) {
        x[c] = x[nc + c] = 0.0;                          // f_re
        x[2 * nc + c] = x[3 * nc + c] = 0.0;             // f_im
      }
    for (int n = 0; n < nn; ++n)
      if (!grid_.node_active[n] || ms_node_[n]) {
        x[4 * std::size_t(nc) + n] = 0.0;                // g_re
        x[4 * std::size_t(nc) + nn + n] = 0.0;           // g_im
      }
  }

  std::vector<double> lift_residual_norms(std::span<const double>, std::span<const double>,
                                          const ObservationVector& z) const override {
    const std::vector<double> lift = data_lift(z);
    const int nn = grid_.n_nodes();
    ScalarField lre(grid_), lim(grid_);
    std::copy_n(lift.data(), nn, lre.v.data());
    std::copy_n(lift.data() + nn, nn, lim.v.data());
    const double wc = constants_.omega / (constants_.c0 * constants_.c0);
    ScalarField mre(grid_), mim(grid_);
    for (int n = 0; n < nn; ++n)
      if (grid_.node_interior[n]) {
        mre.v[n] = wc * lre.v[n];
        mim.v[n] = wc * lim.v[n];
      }
    // blocks: q1, q2, q3, q4, bc_re, bc_im (bumps vanish on the boundary)
    return {std::sqrt(l2_norm_sq(gradient(lre))), std::sqrt(l2_norm_sq(gradient(lim))),
            std::sqrt(l2_norm_sq(mim)), std::sqrt(l2_norm_sq(mre)), 0.0, 0.0};
  }

  double b_norm(std::span<const double> x, std::span<const double> u) const override {
    double s = 0.0;
    s += std::sqrt(cell_pair_norm_sq(f_re(x))) + std::sqrt(cell_pair_norm_sq(f_im(x)));
    s += std::sqrt(node_norm_sq(g_re(x))) + std::sqrt(node_norm_sq(g_im(x)));
    s += sparsity_norm(x);
    ScalarField pre(grid_), pim(grid_);
    std::copy_n(p_re(u).data(), grid_.n_nodes(), pre.v.data());
    std::copy_n(p_im(u).data(), grid_.n_nodes(), pim.v.data());
    s += std::sqrt(l2_norm_sq(pre) + l2_norm_sq(gradient(pre)));
    s += std::sqrt(l2_norm_sq(pim) + l2_norm_sq(gradient(pim)));
    const VectorField vre = unpack_cells(v_re(u)), vim = unpack_cells(v_im(u));
    s += std::sqrt(l2_norm_sq(vre) + l2_norm_sq(divergence(vre)));
    s += std::sqrt(l2_norm_sq(vim) + l2_norm_sq(divergence(vim)));
    s += norm2(kernel_observation(u));
    return s;
  }

  double parameter_distance(std::span<const double> x,
                            std::span<const double> x_ref) const override {
    double num = 0.0, den = 0.0;
    const int nn = grid_.n_nodes(), nc = grid_.n_cells();
    for (int c = 0; c < 4 * nc; ++c) {
      if (!grid_.cell_active[c % nc]) continue;
      num += grid_.cell_area() * (x[c] - x_ref[c]) * (x[c] - x_ref[c]);
      den += grid_.cell_area() * x_ref[c] * x_ref[c];
    }
    for (std::size_t k = 4 * std::size_t(nc); k < x.size(); ++k) {
      const double w = grid_.node_weight[(k - 4 * std::size_t(nc)) % nn];
      num += w * (x[k] - x_ref[k]) * (x[k] - x_ref[k]);
      den += w * x_ref[k] * x_ref[k];
    }
    return std::sqrt(num / den);
  }

  std::vector<double> initial_parameters() const override {
    return std::vector<double>(parameter_size(), 0.0);
  }

  /// Manufactures microphone data for given sources by solving the forward
  /// first-order system (a single CG on the quadratic misfit over the total
  /// state; the zeroth-order couplings make it positive definite).
  AcousticSynthesis synthesize(std::span<const double> x_true) const {
    AcousticSynthesis out;
    const std::size_t nu = state_size();
    std::vector<double> gx(parameter_size()), gu0(nu, 0.0), gu(nu);
    std::vector<double> zero(nu, 0.0);
    misfit_total_gradient(x_true, zero, gx, gu0);
    std::vector<double> b(nu);
    for (std::size_t k = 0; k < nu; ++k) b[k] = -gu0[k];
    auto apply = [&](const std::vector<double>& z, std::vector<double>& az) {
      std::fill(gx.begin(), gx.end(), 0.0);
      std::fill(gu.begin(), gu.end(), 0.0);
      misfit_total_gradient(x_true, z, gx, gu);
      for (std::size_t k = 0; k < nu; ++k) az[k] = gu[k] - gu0[k];
    };
    const CgResult cg = conjugate_gradient(apply, b, out.state, 60000, 1e-11);
    if (!cg.converged)
      throw std::runtime_error("acoustic forward solve non-convergence: residual " +
                               format_double(cg.residual) + " after " +
                               std::to_string(cg.iterations) + " iterations");
    out.data = observe_state(out.state);
    out.misfit_at_optimum = misfit_total(x_true, out.state);
    return out;
  }

 private:
  struct Face {
    int cell = 0;
    int n0 = 0, n1 = 0;       // face nodes
    double nx = 0.0, ny = 0.0;  // outward normal
    double length = 0.0;
    bool absorbing = true;
  };

  VectorField unpack_cells(std::span<const double> packed) const {
    VectorField v(grid_);
    std::copy_n(packed.data(), grid_.n_cells(), v.x.data());
    std::copy_n(packed.data() + grid_.n_cells(), grid_.n_cells(), v.y.data());
    return v;
  }

  double cell_pair_norm_sq(std::span<const double> packed) const {
    double s = 0.0;
    const int nc = grid_.n_cells();
    for (int c = 0; c < nc; ++c)
      if (grid_.cell_active[c])
        s += grid_.cell_area() * (packed[c] * packed[c] + packed[nc + c] * packed[nc + c]);
    return s;
  }

  double node_norm_sq(std::span<const double> nodevals) const {
    double s = 0.0;
    for (int n = 0; n < grid_.n_nodes(); ++n)
      s += grid_.node_weight[n] * nodevals[n] * nodevals[n];
    return s;
  }

  void snap_mics(const MicArray& mics) {
    L_ = int(mics.points.size());
    double d_min = std::numeric_limits<double>::max();
    for (const auto& p : mics.points) {
      const int i = int(std::lround(p[0] / grid_.hx));
      const int j = int(std::lround(p[1] / grid_.hy));
      require(i > 0 && i < grid_.nx && j > 0 && j < grid_.ny,
              "acoustics: microphone outside the domain interior");
      mic_nodes_.push_back(grid_.node_index(i, j));
      mic_pos_.push_back({grid_.node_x(i), grid_.node_y(j)});
    }
    for (int a = 0; a < L_; ++a)
      for (int b = a + 1; b < L_; ++b) {
        require(mic_nodes_[a] != mic_nodes_[b],
                "acoustics: two microphones snap to the same grid node");
        d_min = std::min(d_min, std::hypot(mic_pos_[a][0] - mic_pos_[b][0],
                                           mic_pos_[a][1] - mic_pos_[b][1]));
      }
    if (L_ == 1) d_min = 0.25;
    radius_ = mics.bump_radius > 0.0 ? mics.bump_radius
                                     : std::min(0.45 * d_min, 2.0 * std::min(grid_.hx, grid_.hy));
    require(radius_ < 0.5 * d_min,
            "acoustics: mics too close, bump radius infeasible (need r < d_min/2)");
  }

  void build_measurement_region() {
    double x0 = 1.0, x1 = 0.0, y0 = 1.0, y1 = 0.0;
    for (const auto& p : mic_pos_) {
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
    }
    // mic bounding box dilated by 2 cells
    x0 -= 2.0 * grid_.hx;
    x1 += 2.0 * grid_.hx;
    y0 -= 2.0 * grid_.hy;
    y1 += 2.0 * grid_.hy;
    ms_cell_.assign(std::size_t(grid_.n_cells()), 0);
    ms_node_.assign(std::size_t(grid_.n_nodes()), 0);
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i)
        if (grid_.cell_cx(i) > x0 && grid_.cell_cx(i) < x1 && grid_.cell_cy(j) > y0 &&
            grid_.cell_cy(j) < y1)
          ms_cell_[grid_.cell_index(i, j)] = 1;
    for (int j = 0; j <= grid_.ny; ++j)
      for (int i = 0; i <= grid_.nx; ++i)
        if (grid_.node_x(i) >= x0 && grid_.node_x(i) <= x1 && grid_.node_y(j) >= y0 &&
            grid_.node_y(j) <= y1)
          ms_node_[grid_.node_index(i, j)] = 1;
  }

  void build_bumps() {
    const int nn = grid_.n_nodes();
    for (int l = 0; l < L_; ++l) {
      ScalarField b(grid_);
      std::vector<std::pair<int, double>> supp;
      for (int j = 0; j <= grid_.ny; ++j)
        for (int i = 0; i <= grid_.nx; ++i) {
          const double d =
              std::hypot(grid_.node_x(i) - mic_pos_[l][0], grid_.node_y(j) - mic_pos_[l][1]);
          const double val = bump_profile(d, radius_);
          if (val != 0.0) {
            const int n = grid_.node_index(i, j);
            require(ms_node_[n], "acoustics: bump support leaves the measurement subdomain");
            b.v[n] = val;
            supp.emplace_back(n, val);
          }
        }
      // exact Kronecker property at the (node-snapped) microphones
      for (int k = 0; k < L_; ++k)
        require(b.v[mic_nodes_[k]] == (k == l ? 1.0 : 0.0),
                "acoustics: bumps overlap a neighbouring microphone");
      bumps_.push_back(std::move(b));
      bump_support_.push_back(std::move(supp));
    }
    (void)nn;
  }

  void build_boundary_faces(const std::vector<int>& rigid_sides) {
    auto is_rigid = [&](int side) {
      for (int s : rigid_sides)
        if (s == side) return true;
      return false;
    };
    // sides: 0 = bottom, 1 = right, 2 = top, 3 = left
    for (int i = 0; i < grid_.nx; ++i) {
      faces_.push_back({grid_.cell_index(i, 0), grid_.node_index(i, 0),
                        grid_.node_index(i + 1, 0), 0.0, -1.0, grid_.hx, !is_rigid(0)});
      faces_.push_back({grid_.cell_index(i, grid_.ny - 1), grid_.node_index(i, grid_.ny),
                        grid_.node_index(i + 1, grid_.ny), 0.0, 1.0, grid_.hx, !is_rigid(2)});
    }
    for (int j = 0; j < grid_.ny; ++j) {
      faces_.push_back({grid_.cell_index(0, j), grid_.node_index(0, j),
                        grid_.node_index(0, j + 1), -1.0, 0.0, grid_.hy, !is_rigid(3)});
      faces_.push_back({grid_.cell_index(grid_.nx - 1, j), grid_.node_index(grid_.nx, j),
                        grid_.node_index(grid_.nx, j + 1), 1.0, 0.0, grid_.hy, !is_rigid(1)});
    }
  }

  Grid grid_;
  AcousticConstants constants_;
  int L_ = 0;
  double radius_ = 0.0;
  std::vector<int> mic_nodes_;
  std::vector<std::array<double, 2>> mic_pos_;
  std::vector<ScalarField> bumps_;
  std::vector<std::vector<std::pair<int, double>>> bump_support_;
  std::vector<std::uint8_t> ms_cell_, ms_node_;
  std::vector<Face> faces_;
};

}  // namespace invreg
