#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "invreg/util.hpp"

namespace invreg {

/// Structured 2D grid on a bounding box with an active-cell mask.
/// Scalars live at nodes, vectors at cell centers; this staggering makes the
/// discrete identity div(perp_grad(f)) = 0 hold exactly at interior nodes.
struct Grid {
  enum class Domain { unit_square, disk_embedded };

  int nx = 0, ny = 0;
  double hx = 0.0, hy = 0.0;
  Domain domain = Domain::unit_square;
  std::vector<std::uint8_t> cell_active;   // nx*ny
  std::vector<std::uint8_t> node_active;   // (nx+1)*(ny+1): touches an active cell
  std::vector<std::uint8_t> node_interior; // all 4 adjacent cells active
  std::vector<double> node_weight;         // hx*hy*(active adjacent cells)/4

  int n_cells() const { return nx * ny; }
  int n_nodes() const { return (nx + 1) * (ny + 1); }
  int cell_index(int i, int j) const { return j * nx + i; }
  int node_index(int i, int j) const { return j * (nx + 1) + i; }

  double node_x(int i) const { return i * hx; }
  double node_y(int j) const { return j * hy; }
  double cell_cx(int i) const { return (i + 0.5) * hx; }
  double cell_cy(int j) const { return (j + 0.5) * hy; }

  bool cell_is_active(int i, int j) const {
    return i >= 0 && i < nx && j >= 0 && j < ny && cell_active[cell_index(i, j)];
  }

  double cell_area() const { return hx * hy; }

  /// Total active area (exact sum of active cell areas).
  double area() const {
    double a = 0.0;
    for (auto c : cell_active) a += c ? cell_area() : 0.0;
    return a;
  }

  static Grid unit_square(int nx, int ny) {
    Grid g = make(nx, ny);
    g.domain = Domain::unit_square;
    g.cell_active.assign(std::size_t(nx) * ny, 1);
    g.finalize();
    return g;
  }

  /// Disk of radius `r` centred in the unit square, realized as the set of
  /// cells whose centre lies inside the circle.
  static Grid disk_embedded(int nx, int ny, double r = 0.45) {
    Grid g = make(nx, ny);
    g.domain = Domain::disk_embedded;
    g.cell_active.assign(std::size_t(nx) * ny, 0);
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const double dx = g.cell_cx(i) - 0.5, dy = g.cell_cy(j) - 0.5;
        if (dx * dx + dy * dy < r * r) g.cell_active[g.cell_index(i, j)] = 1;
      }
    g.finalize();
    return g;
  }

  void finalize() {
    node_active.assign(std::size_t(n_nodes()), 0);
    node_interior.assign(std::size_t(n_nodes()), 0);
    node_weight.assign(std::size_t(n_nodes()), 0.0);
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) {
        int cnt = 0;
        cnt += cell_is_active(i - 1, j - 1);
        cnt += cell_is_active(i, j - 1);
        cnt += cell_is_active(i - 1, j);
        cnt += cell_is_active(i, j);
        const int n = node_index(i, j);
        node_active[n] = cnt > 0;
        node_interior[n] = cnt == 4;
        node_weight[n] = cell_area() * cnt / 4.0;
      }
  }

 private:
  static Grid make(int nx, int ny) {
    require(nx >= 8 && ny >= 8, "grid: nx, ny must be >= 8");
    Grid g;
    g.nx = nx;
    g.ny = ny;
    g.hx = 1.0 / nx;
    g.hy = 1.0 / ny;
    return g;
  }
};

/// Node-valued field. Values at inactive nodes are kept at zero.
struct ScalarField {
  const Grid* grid = nullptr;
  std::vector<double> v;

  ScalarField() = default;
  explicit ScalarField(const Grid& g) : grid(&g), v(std::size_t(g.n_nodes()), 0.0) {}

  double& at(int i, int j) { return v[grid->node_index(i, j)]; }
  double at(int i, int j) const { return v[grid->node_index(i, j)]; }

  template <class F>
  static ScalarField from_function(const Grid& g, F&& f) {
    ScalarField s(g);
    for (int j = 0; j <= g.ny; ++j)
      for (int i = 0; i <= g.nx; ++i)
        if (g.node_active[g.node_index(i, j)])
          s.at(i, j) = f(g.node_x(i), g.node_y(j));
    return s;
  }
};

/// Cell-centred vector field. Values at inactive cells are kept at zero.
struct VectorField {
  const Grid* grid = nullptr;
  std::vector<double> x, y;

  VectorField() = default;
  explicit VectorField(const Grid& g)
      : grid(&g), x(std::size_t(g.n_cells()), 0.0), y(std::size_t(g.n_cells()), 0.0) {}

  template <class F>
  static VectorField from_function(const Grid& g, F&& f) {
    VectorField w(g);
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const int c = g.cell_index(i, j);
        if (!g.cell_active[c]) continue;
        auto val = f(g.cell_cx(i), g.cell_cy(j));
        w.x[c] = val[0];
        w.y[c] = val[1];
      }
    return w;
  }
};

enum class SegmentKind { electrode, gap, absorbing, rigid };

struct BoundarySegment {
  SegmentKind kind = SegmentKind::absorbing;
  int first = 0;  // positions into the boundary cycle, inclusive
  int last = 0;
  double contact_impedance = 0.0;  // electrodes only
};

/// Counterclockwise polyline of boundary nodes with accumulated arclength.
/// Built by chaining the exposed faces of the active-cell region; the region
/// must be simply connected.
struct BoundaryLayout {
  const Grid* grid = nullptr;
  std::vector<int> nodes;        // node indices, cycle order, no repeat of start
  std::vector<double> arclength; // arclength of each cycle position
  double perimeter = 0.0;
  std::vector<BoundarySegment> segments;

  int size() const { return int(nodes.size()); }
  int wrap(int p) const {
    const int n = size();
    return ((p % n) + n) % n;
  }
  /// Arclength from cycle position a to b walking forward (counterclockwise).
  double arc_between(int a, int b) const {
    a = wrap(a);
    b = wrap(b);
    double s = arclength[b] - arclength[a];
    if (s < 0) s += perimeter;
    return s;
  }
  /// Number of nodes walking forward from a to b inclusive.
  int count_between(int a, int b) const {
    a = wrap(a);
    b = wrap(b);
    int c = b - a;
    if (c < 0) c += size();
    return c + 1;
  }
  int snap(double s) const {
    // nearest cycle position to arclength s (cyclic)
    double best = std::numeric_limits<double>::max();
    int pos = 0;
    for (int p = 0; p < size(); ++p) {
      double d = std::abs(arclength[p] - s);
      d = std::min(d, perimeter - d);
      if (d < best) {
        best = d;
        pos = p;
      }
    }
    return pos;
  }
};

/// Trace the outer boundary of the active region. Edges are oriented with the
/// active cell on the left, which yields a counterclockwise cycle.
inline BoundaryLayout trace_boundary(const Grid& g) {
  std::map<int, int> next_of;  // start node -> end node
  auto add_edge = [&](int a, int b) {
    auto [it, inserted] = next_of.emplace(a, b);
    require(inserted, "boundary tracing: active region has a pinch point");
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      if (!g.cell_is_active(i, j)) continue;
      if (!g.cell_is_active(i, j - 1)) add_edge(g.node_index(i, j), g.node_index(i + 1, j));
      if (!g.cell_is_active(i + 1, j)) add_edge(g.node_index(i + 1, j), g.node_index(i + 1, j + 1));
      if (!g.cell_is_active(i, j + 1)) add_edge(g.node_index(i + 1, j + 1), g.node_index(i, j + 1));
      if (!g.cell_is_active(i - 1, j)) add_edge(g.node_index(i, j + 1), g.node_index(i, j));
    }
  require(!next_of.empty(), "boundary tracing: no active cells");

  BoundaryLayout bl;
  bl.grid = &g;
  const int start = next_of.begin()->first;
  int cur = start;
  double s = 0.0;
  do {
    bl.nodes.push_back(cur);
    bl.arclength.push_back(s);
    auto it = next_of.find(cur);
    require(it != next_of.end(), "boundary tracing: open chain");
    const int nxt = it->second;
    const int ci = cur % (g.nx + 1), cj = cur / (g.nx + 1);
    const int ni = nxt % (g.nx + 1), nj = nxt / (g.nx + 1);
    s += (ci != ni) ? g.hx : g.hy;
    cur = nxt;
  } while (cur != start);
  bl.perimeter = s;
  require(bl.nodes.size() == next_of.size(),
          "boundary tracing: active region is not simply connected");
  return bl;
}

}  // namespace invreg
