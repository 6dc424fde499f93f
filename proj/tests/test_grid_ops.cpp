#include <catch2/catch_amalgamated.hpp>

#include "invreg/grid.hpp"
#include "invreg/ops.hpp"

using namespace invreg;

namespace {

ScalarField random_field(const Grid& g, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ScalarField f(g);
  for (int n = 0; n < g.n_nodes(); ++n)
    if (g.node_active[n]) f.v[n] = rng.uniform(lo, hi);
  return f;
}

VectorField random_vector(const Grid& g, Rng& rng) {
  VectorField v(g);
  for (int c = 0; c < g.n_cells(); ++c)
    if (g.cell_active[c]) {
      v.x[c] = rng.uniform(-1.0, 1.0);
      v.y[c] = rng.uniform(-1.0, 1.0);
    }
  return v;
}

}  // namespace

TEST_CASE("gradient is exact on constants and affine fields") {
  for (const Grid& g : {Grid::unit_square(16, 16), Grid::disk_embedded(24, 24)}) {
    const VectorField zc = gradient(ScalarField::from_function(g, [](double, double) {
      return 3.7;
    }));
    for (int c = 0; c < g.n_cells(); ++c) {
      REQUIRE(zc.x[c] == 0.0);
      REQUIRE(zc.y[c] == 0.0);
    }
    const VectorField gx =
        gradient(ScalarField::from_function(g, [](double x, double) { return x; }));
    for (int c = 0; c < g.n_cells(); ++c)
      if (g.cell_active[c]) {
        REQUIRE(gx.x[c] == Catch::Approx(1.0).margin(1e-14));
        REQUIRE(gx.y[c] == Catch::Approx(0.0).margin(1e-14));
      }
  }
}

TEST_CASE("gradient of smooth fields converges at second order") {
  // x^2 is differentiated exactly by the averaged stencil; x^3 is the first
  // monomial with a nonzero truncation term, which scales as h^2
  auto max_err = [](int n) {
    const Grid g = Grid::unit_square(n, n);
    const VectorField w =
        gradient(ScalarField::from_function(g, [](double x, double) { return x * x * x; }));
    double e = 0.0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const double xc = g.cell_cx(i);
        e = std::max(e, std::abs(w.x[g.cell_index(i, j)] - 3.0 * xc * xc));
      }
    return e;
  };
  const double e16 = max_err(16), e32 = max_err(32);
  REQUIRE(e32 / e16 == Catch::Approx(0.25).margin(0.05));

  const Grid g = Grid::unit_square(16, 16);
  const VectorField w =
      gradient(ScalarField::from_function(g, [](double x, double) { return x * x; }));
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      REQUIRE(w.x[g.cell_index(i, j)] ==
              Catch::Approx(2.0 * g.cell_cx(i)).epsilon(1e-13));
}

TEST_CASE("perp_gradient rotates the gradient by 90 degrees") {
  const Grid g = Grid::unit_square(12, 12);
  const VectorField a =
      perp_gradient(ScalarField::from_function(g, [](double, double y) { return y; }));
  const VectorField b =
      perp_gradient(ScalarField::from_function(g, [](double x, double) { return x; }));
  for (int c = 0; c < g.n_cells(); ++c) {
    REQUIRE(a.x[c] == Catch::Approx(-1.0).margin(1e-14));
    REQUIRE(a.y[c] == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(b.x[c] == Catch::Approx(0.0).margin(1e-14));
    REQUIRE(b.y[c] == Catch::Approx(1.0).margin(1e-14));
  }

  Rng rng(7);
  const ScalarField f = random_field(g, rng);
  const VectorField gr = gradient(f), pg = perp_gradient(f);
  for (int c = 0; c < g.n_cells(); ++c) {
    REQUIRE(pg.x[c] == -gr.y[c]);
    REQUIRE(pg.y[c] == gr.x[c]);
  }
}

TEST_CASE("divergence of a constant field vanishes at interior nodes") {
  const Grid g = Grid::unit_square(16, 16);
  VectorField v(g);
  std::fill(v.x.begin(), v.x.end(), 1.0);
  const ScalarField d = divergence(v);
  for (int n = 0; n < g.n_nodes(); ++n)
    if (g.node_interior[n]) REQUIRE(d.v[n] == 0.0);
}

TEST_CASE("div(perp_grad(f)) = 0 exactly at interior nodes") {
  // integer-valued fields on a power-of-two grid: every intermediate value is
  // exactly representable, so the cancellation is bitwise
  for (const Grid& g : {Grid::unit_square(16, 16), Grid::disk_embedded(32, 32)}) {
    Rng rng(11);
    ScalarField f(g);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n]) f.v[n] = double(int(rng.next_index(2048)) - 1024);
    const ScalarField d = divergence(perp_gradient(f));
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_interior[n]) REQUIRE(d.v[n] == 0.0);
  }
  // real-valued fields: zero to round-off relative to the field scale
  const Grid g = Grid::unit_square(24, 24);
  Rng rng(13);
  const ScalarField f = random_field(g, rng);
  const ScalarField d = divergence(perp_gradient(f));
  const double scale = max_abs(f.v) / (g.hx * g.hy);
  for (int n = 0; n < g.n_nodes(); ++n)
    if (g.node_interior[n]) REQUIRE(std::abs(d.v[n]) <= 1e-12 * scale);
}

TEST_CASE("discrete adjointness <grad f, v> + <f, div v> = 0 to 1e-12") {
  for (const Grid& g : {Grid::unit_square(16, 16), Grid::disk_embedded(24, 24)}) {
    Rng rng(17);
    for (int rep = 0; rep < 5; ++rep) {
      const ScalarField f = random_field(g, rng);
      const VectorField v = random_vector(g, rng);
      const double a = l2_inner(gradient(f), v);
      const double b = l2_inner(f, divergence(v));
      REQUIRE(std::abs(a + b) <= 1e-12 * (std::abs(a) + std::abs(b) + 1e-30));
    }
  }
}

TEST_CASE("broken-adjoint fault injection is detected") {
  const Grid g = Grid::unit_square(16, 16);
  Rng rng(19);
  const ScalarField f = random_field(g, rng);
  const VectorField v = random_vector(g, rng);
  testing::broken_adjoint = true;
  const double a = l2_inner(gradient(f), v);
  const double b = l2_inner(f, divergence(v));
  testing::broken_adjoint = false;
  REQUIRE(std::abs(a + b) > 1e-12 * (std::abs(a) + std::abs(b)));
}

TEST_CASE("operators are linear") {
  const Grid g = Grid::disk_embedded(24, 24);
  Rng rng(23);
  const ScalarField f = random_field(g, rng), h = random_field(g, rng);
  ScalarField combo(g);
  for (int n = 0; n < g.n_nodes(); ++n) combo.v[n] = 2.5 * f.v[n] - 0.75 * h.v[n];
  const VectorField gc = gradient(combo), gf = gradient(f), gh = gradient(h);
  for (int c = 0; c < g.n_cells(); ++c) {
    REQUIRE(gc.x[c] == Catch::Approx(2.5 * gf.x[c] - 0.75 * gh.x[c]).margin(1e-12));
    REQUIRE(gc.y[c] == Catch::Approx(2.5 * gf.y[c] - 0.75 * gh.y[c]).margin(1e-12));
  }
}

TEST_CASE("l2_inner measures the active area") {
  const Grid sq = Grid::unit_square(16, 16);
  const ScalarField one = ScalarField::from_function(sq, [](double, double) { return 1.0; });
  REQUIRE(l2_inner(one, one) == Catch::Approx(1.0).epsilon(1e-13));

  const Grid disk = Grid::disk_embedded(64, 64);
  const ScalarField od = ScalarField::from_function(disk, [](double, double) { return 1.0; });
  const double area = M_PI * 0.45 * 0.45;
  REQUIRE(l2_inner(od, od) == Catch::Approx(area).epsilon(0.02));
  REQUIRE(l2_inner(od, od) == Catch::Approx(disk.area()).epsilon(1e-13));

  Rng rng(29);
  const ScalarField f = random_field(sq, rng);
  REQUIRE(l2_inner(f, f) >= 0.0);
  ScalarField f2 = f;
  for (double& v : f2.v) v *= 3.0;
  REQUIRE(l2_inner(f2, f2) == Catch::Approx(9.0 * l2_inner(f, f)).epsilon(1e-13));
}

TEST_CASE("smooth norm: zero, affine, and quadratic scaling") {
  const Grid g = Grid::unit_square(16, 16);
  REQUIRE(smooth_norm_sq(ScalarField(g)) == 0.0);

  const ScalarField aff =
      ScalarField::from_function(g, [](double x, double y) { return 2.0 * x - y + 0.3; });
  const double expected = l2_norm_sq(aff) + l2_norm_sq(gradient(aff));
  REQUIRE(smooth_norm_sq(aff) == Catch::Approx(expected).epsilon(1e-12));

  Rng rng(31);
  const ScalarField f = random_field(g, rng);
  ScalarField f2 = f;
  for (double& v : f2.v) v *= 2.0;
  REQUIRE(smooth_norm_sq(f2) == Catch::Approx(4.0 * smooth_norm_sq(f)).epsilon(1e-12));
}

TEST_CASE("boundary trace and trapezoidal boundary integral") {
  const Grid g = Grid::unit_square(16, 16);
  BoundaryLayout bl = trace_boundary(g);
  REQUIRE(bl.perimeter == Catch::Approx(4.0).epsilon(1e-13));

  // bottom edge: arclength 0 .. 1 starting from the lower-left corner
  BoundarySegment bottom{SegmentKind::absorbing, bl.snap(0.0), bl.snap(1.0), 0.0};

  const ScalarField cf = ScalarField::from_function(g, [](double, double) { return 2.0; });
  auto tr = boundary_trace(cf, bl, bottom);
  REQUIRE(int(tr.size()) == bl.count_between(bottom.first, bottom.last));
  for (const auto& [s, v] : tr) REQUIRE(v == 2.0);
  REQUIRE(boundary_integral(cf, bl, bottom) == Catch::Approx(2.0).epsilon(1e-13));

  const ScalarField fx = ScalarField::from_function(g, [](double x, double) { return x; });
  for (const auto& [s, v] : boundary_trace(fx, bl, bottom))
    REQUIRE(v == Catch::Approx(s).margin(1e-14));  // bottom edge arclength equals x
  REQUIRE(boundary_integral(fx, bl, bottom) == Catch::Approx(0.5).epsilon(1e-13));

  REQUIRE(boundary_integral(ScalarField(g), bl, bottom) == 0.0);
}

TEST_CASE("harmonic extension: constants, affine data, maximum principle") {
  for (const Grid& g : {Grid::unit_square(16, 16), Grid::disk_embedded(24, 24)}) {
    std::vector<double> bd(std::size_t(g.n_nodes()), 0.0);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n] && !g.node_interior[n]) bd[n] = 1.25;
    const ScalarField c = harmonic_extension(g, bd);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n]) REQUIRE(c.v[n] == Catch::Approx(1.25).margin(1e-10));

    // affine fields are discrete-harmonic, so the solve reproduces them
    const ScalarField ref =
        ScalarField::from_function(g, [](double x, double y) { return x - 0.4 * y; });
    std::vector<double> abd(std::size_t(g.n_nodes()), 0.0);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n] && !g.node_interior[n]) abd[n] = ref.v[n];
    const ScalarField a = harmonic_extension(g, abd);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n]) REQUIRE(a.v[n] == Catch::Approx(ref.v[n]).margin(1e-9));

    Rng rng(37);
    std::vector<double> rbd(std::size_t(g.n_nodes()), 0.0);
    double lo = 1.0, hi = -1.0;
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n] && !g.node_interior[n]) {
        rbd[n] = rng.uniform(-1.0, 1.0);
        lo = std::min(lo, rbd[n]);
        hi = std::max(hi, rbd[n]);
      }
    const ScalarField r = harmonic_extension(g, rbd);
    for (int n = 0; n < g.n_nodes(); ++n)
      if (g.node_active[n]) {
        REQUIRE(r.v[n] >= lo - 1e-10);
        REQUIRE(r.v[n] <= hi + 1e-10);
      }
  }
}

TEST_CASE("grid validation") {
  REQUIRE_THROWS_AS(Grid::unit_square(4, 16), std::invalid_argument);
  const Grid disk = Grid::disk_embedded(32, 32);
  int active = 0;
  for (auto c : disk.cell_active) active += c;
  REQUIRE(active > 0);
  REQUIRE(active < disk.n_cells());
}
