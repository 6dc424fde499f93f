#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "invreg/grid.hpp"
#include "invreg/util.hpp"

namespace invreg {

/// Cell-centred gradient: average of the node differences along each cell
/// edge pair. Exact on affine fields.
inline VectorField gradient(const ScalarField& f) {
  const Grid& g = *f.grid;
  VectorField w(g);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.cell_index(i, j);
      if (!g.cell_active[c]) continue;
      const double f00 = f.at(i, j), f10 = f.at(i + 1, j);
      const double f01 = f.at(i, j + 1), f11 = f.at(i + 1, j + 1);
      w.x[c] = (f10 - f00 + f11 - f01) / (2.0 * g.hx);
      w.y[c] = (f01 - f00 + f11 - f10) / (2.0 * g.hy);
    }
  return w;
}

/// perp_grad(f) = (-d f/dx2, d f/dx1), i.e. the gradient rotated by 90 degrees.
inline VectorField perp_gradient(const ScalarField& f) {
  VectorField w = gradient(f);
  for (std::size_t c = 0; c < w.x.size(); ++c) {
    const double gx = w.x[c], gy = w.y[c];
    w.x[c] = -gy;
    w.y[c] = gx;
  }
  return w;
}

/// Node-centred divergence, defined as the exact negative adjoint of
/// `gradient` under the mass-weighted inner products:
///   <grad f, v>_cells + <f, div v>_nodes = 0   for every f, v.
/// The flux boundary term is folded into the boundary-node values, so the
/// identity holds with zero remainder; at interior nodes the stencil is the
/// usual mirror-symmetric centred one, and div(perp_grad(f)) vanishes there
/// identically.
inline ScalarField divergence(const VectorField& v) {
  const Grid& g = *v.grid;
  ScalarField d(g);
  const double fault = testing::broken_adjoint ? 1.0 + 1e-3 : 1.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.cell_index(i, j);
      if (!g.cell_active[c]) continue;
      const double ax = v.x[c] * g.hy / 2.0, ay = v.y[c] * g.hx / 2.0;
      d.v[g.node_index(i, j)] += -ax - ay;
      d.v[g.node_index(i + 1, j)] += ax * fault - ay;
      d.v[g.node_index(i, j + 1)] += -ax + ay;
      d.v[g.node_index(i + 1, j + 1)] += ax + ay;
    }
  for (int n = 0; n < g.n_nodes(); ++n)
    d.v[n] = g.node_active[n] ? -d.v[n] / g.node_weight[n] : 0.0;
  return d;
}

inline double l2_inner(const ScalarField& a, const ScalarField& b) {
  const Grid& g = *a.grid;
  double s = 0.0;
  for (int n = 0; n < g.n_nodes(); ++n) s += g.node_weight[n] * a.v[n] * b.v[n];
  return s;
}

inline double l2_inner(const VectorField& a, const VectorField& b) {
  const Grid& g = *a.grid;
  double s = 0.0;
  for (int c = 0; c < g.n_cells(); ++c)
    if (g.cell_active[c]) s += g.cell_area() * (a.x[c] * b.x[c] + a.y[c] * b.y[c]);
  return s;
}

inline double l2_norm_sq(const ScalarField& a) { return l2_inner(a, a); }
inline double l2_norm_sq(const VectorField& a) { return l2_inner(a, a); }

/// Five-point node Laplacian; zero at nodes without a full interior stencil.
inline ScalarField laplacian(const ScalarField& f) {
  const Grid& g = *f.grid;
  ScalarField d(g);
  for (int j = 1; j < g.ny; ++j)
    for (int i = 1; i < g.nx; ++i) {
      const int n = g.node_index(i, j);
      if (!g.node_interior[n]) continue;
      d.v[n] = (f.at(i - 1, j) - 2.0 * f.at(i, j) + f.at(i + 1, j)) / (g.hx * g.hx) +
               (f.at(i, j - 1) - 2.0 * f.at(i, j) + f.at(i, j + 1)) / (g.hy * g.hy);
    }
  return d;
}

/// Discrete smoothing norm standing in for the H^s (s > 1) regularity the
/// analysis needs: ||f||^2 + ||grad f||^2 + ||Lap_h f||^2.
inline double smooth_norm_sq(const ScalarField& f) {
  const ScalarField lap = laplacian(f);
  return l2_norm_sq(f) + l2_norm_sq(gradient(f)) + l2_norm_sq(lap);
}

/// Accumulates scale * d<G, grad f>_cells / d f into `node_out` (raw
/// derivative with respect to node values, no mass weights).
inline void add_grad_adjoint(const VectorField& G, double scale, std::span<double> node_out) {
  const Grid& g = *G.grid;
  const double fault = testing::broken_adjoint ? 1.0 + 1e-3 : 1.0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int c = g.cell_index(i, j);
      if (!g.cell_active[c]) continue;
      const double ax = scale * G.x[c] * g.hy / 2.0, ay = scale * G.y[c] * g.hx / 2.0;
      node_out[g.node_index(i, j)] += -ax - ay;
      node_out[g.node_index(i + 1, j)] += ax * fault - ay;
      node_out[g.node_index(i, j + 1)] += -ax + ay;
      node_out[g.node_index(i + 1, j + 1)] += ax + ay;
    }
}

/// Accumulates scale * d<G, perp_grad f>_cells / d f.
inline void add_perp_grad_adjoint(const VectorField& G, double scale,
                                  std::span<double> node_out) {
  VectorField r(*G.grid);
  for (std::size_t c = 0; c < G.x.size(); ++c) {
    r.x[c] = G.y[c];
    r.y[c] = -G.x[c];
  }
  add_grad_adjoint(r, scale, node_out);
}

/// Accumulates scale * d(sum_n r_n * Lap_h(f)_n) / d f (plain sum, no weights).
inline void add_laplacian_adjoint(const Grid& g, std::span<const double> r, double scale,
                                  std::span<double> node_out) {
  for (int j = 1; j < g.ny; ++j)
    for (int i = 1; i < g.nx; ++i) {
      const int n = g.node_index(i, j);
      if (!g.node_interior[n] || r[n] == 0.0) continue;
      const double c = scale * r[n];
      node_out[n] += c * (-2.0 / (g.hx * g.hx) - 2.0 / (g.hy * g.hy));
      node_out[g.node_index(i - 1, j)] += c / (g.hx * g.hx);
      node_out[g.node_index(i + 1, j)] += c / (g.hx * g.hx);
      node_out[g.node_index(i, j - 1)] += c / (g.hy * g.hy);
      node_out[g.node_index(i, j + 1)] += c / (g.hy * g.hy);
    }
}

/// Accumulates scale * d smooth_norm_sq(f) / d f.
inline void add_smooth_norm_grad(const ScalarField& f, double scale,
                                 std::span<double> node_out) {
  const Grid& g = *f.grid;
  for (int n = 0; n < g.n_nodes(); ++n) node_out[n] += scale * 2.0 * g.node_weight[n] * f.v[n];
  add_grad_adjoint(gradient(f), 2.0 * scale, node_out);
  ScalarField lap = laplacian(f);
  for (int n = 0; n < g.n_nodes(); ++n) lap.v[n] *= g.node_weight[n];
  add_laplacian_adjoint(g, lap.v, 2.0 * scale, node_out);
}

/// Values of f at the nodes of one boundary segment, in arclength order.
inline std::vector<std::pair<double, double>> boundary_trace(const ScalarField& f,
                                                             const BoundaryLayout& bl,
                                                             const BoundarySegment& seg) {
  std::vector<std::pair<double, double>> out;
  for (int p = seg.first;; p = bl.wrap(p + 1)) {
    out.emplace_back(bl.arclength[p], f.v[bl.nodes[p]]);
    if (p == bl.wrap(seg.last)) break;
  }
  return out;
}

/// Trapezoidal rule along one boundary segment.
inline double boundary_integral(const ScalarField& f, const BoundaryLayout& bl,
                                const BoundarySegment& seg) {
  double s = 0.0;
  for (int p = seg.first; p != bl.wrap(seg.last); p = bl.wrap(p + 1)) {
    const int q = bl.wrap(p + 1);
    const double ds = bl.arc_between(p, q);
    s += 0.5 * (f.v[bl.nodes[p]] + f.v[bl.nodes[q]]) * ds;
  }
  return s;
}

/// Solves the 5-point Laplace equation with Dirichlet values prescribed on
/// every active node that is not interior. Satisfies the discrete maximum
/// principle up to solver tolerance.
inline ScalarField harmonic_extension(const Grid& g, std::span<const double> dirichlet) {
  std::vector<int> unknown;  // interior node indices
  for (int n = 0; n < g.n_nodes(); ++n)
    if (g.node_interior[n]) unknown.push_back(n);

  ScalarField base(g);
  for (int n = 0; n < g.n_nodes(); ++n)
    if (g.node_active[n] && !g.node_interior[n]) {
      require(std::isfinite(dirichlet[n]), "harmonic_extension: non-finite boundary data");
      base.v[n] = dirichlet[n];
    }
  if (unknown.empty()) return base;

  const double cx = 1.0 / (g.hx * g.hx), cy = 1.0 / (g.hy * g.hy);
  auto neighbors = [&](int n, std::array<int, 4>& nb) {
    const int i = n % (g.nx + 1), j = n / (g.nx + 1);
    nb = {g.node_index(i - 1, j), g.node_index(i + 1, j), g.node_index(i, j - 1),
          g.node_index(i, j + 1)};
  };

  std::vector<int> pos(std::size_t(g.n_nodes()), -1);
  for (std::size_t k = 0; k < unknown.size(); ++k) pos[unknown[k]] = int(k);

  std::vector<double> b(unknown.size(), 0.0);
  std::array<int, 4> nb;
  for (std::size_t k = 0; k < unknown.size(); ++k) {
    neighbors(unknown[k], nb);
    b[k] += cx * ((pos[nb[0]] < 0 ? base.v[nb[0]] : 0.0) + (pos[nb[1]] < 0 ? base.v[nb[1]] : 0.0));
    b[k] += cy * ((pos[nb[2]] < 0 ? base.v[nb[2]] : 0.0) + (pos[nb[3]] < 0 ? base.v[nb[3]] : 0.0));
  }

  auto apply = [&](const std::vector<double>& p, std::vector<double>& out) {
    std::array<int, 4> m;
    for (std::size_t k = 0; k < p.size(); ++k) {
      neighbors(unknown[k], m);
      double s = 2.0 * (cx + cy) * p[k];
      if (pos[m[0]] >= 0) s -= cx * p[pos[m[0]]];
      if (pos[m[1]] >= 0) s -= cx * p[pos[m[1]]];
      if (pos[m[2]] >= 0) s -= cy * p[pos[m[2]]];
      if (pos[m[3]] >= 0) s -= cy * p[pos[m[3]]];
      out[k] = s;
    }
  };

  std::vector<double> sol;
  const CgResult cg = conjugate_gradient(apply, b, sol, 40 * int(unknown.size()) + 200, 1e-13);
  if (!cg.converged)
    throw std::runtime_error("harmonic_extension: linear solve failure, residual " +
                             format_double(cg.residual));
  ScalarField out = base;
  for (std::size_t k = 0; k < unknown.size(); ++k) out.v[unknown[k]] = sol[k];
  return out;
}

/// First-order least-squares residual combination shared by the EIT and
/// permeability modules: q = sqrt(c) * grad_part - (1/sqrt(c)) * perp_part,
/// evaluated cellwise with coefficient c > 0.
inline void fosls_combine(double coef, double gx, double gy, double px, double py,
                          double& qx, double& qy) {
  const double r = std::sqrt(coef);
  qx = r * gx - px / r;
  qy = r * gy - py / r;
}

}  // namespace invreg
