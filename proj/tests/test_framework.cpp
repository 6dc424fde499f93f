#include <catch2/catch_amalgamated.hpp>

#include "invreg/solver.hpp"
#include "invreg/sweep.hpp"

using namespace invreg;

namespace {

/// Small linear-model problem for exercising the framework machinery:
/// E(x, u) = u - A x - b with u in R^3, x in R^2, C(u) = (u_0, u_1).
class ToyProblem : public ProblemInstance {
 public:
  explicit ToyProblem(bool full_image = true) : full_image_(full_image) {}

  std::string name() const override { return "toy"; }
  std::size_t parameter_size() const override { return 2; }
  std::size_t state_size() const override { return 3; }

  static std::array<double, 3> model(std::span<const double> x) {
    return {1.0 * x[0] + 0.2 * x[1] + 0.1, -0.3 * x[0] + 0.8 * x[1] - 0.2,
            0.5 * x[0] + 0.5 * x[1] + 0.4};
  }

  std::vector<double> data_lift(const ObservationVector& y) const override {
    if (full_image_) return {y.values[0], y.values[1], 0.0};
    return {y.values[0], 0.0, 0.0};
  }

  double misfit_total(std::span<const double> x, std::span<const double> u) const override {
    const auto m = model(x);
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += 0.5 * (u[i] - m[i]) * (u[i] - m[i]);
    return s;
  }

  void misfit_total_gradient(std::span<const double> x, std::span<const double> u,
                             std::span<double> gx, std::span<double> gu) const override {
    const auto m = model(x);
    const double q0 = u[0] - m[0], q1 = u[1] - m[1], q2 = u[2] - m[2];
    gu[0] += q0;
    gu[1] += q1;
    gu[2] += q2;
    gx[0] += -(1.0 * q0 - 0.3 * q1 + 0.5 * q2);
    gx[1] += -(0.2 * q0 + 0.8 * q1 + 0.5 * q2);
  }

  double regularizer(std::span<const double> x, std::span<const double> u) const override {
    return 0.5 * (dot(x, x) + dot(u, u));
  }
  void regularizer_gradient(std::span<const double> x, std::span<const double> u,
                            std::span<double> gx, std::span<double> gu) const override {
    for (std::size_t i = 0; i < 2; ++i) gx[i] += x[i];
    for (std::size_t i = 0; i < 3; ++i) gu[i] += u[i];
  }

  std::vector<double> kernel_observation(std::span<const double> u) const override {
    if (full_image_) return {u[0], u[1]};
    return {u[0], u[0]};
  }
  void kernel_observation_adjoint(std::span<const double> w,
                                  std::span<double> gu) const override {
    if (full_image_) {
      gu[0] += w[0];
      gu[1] += w[1];
    } else {
      gu[0] += w[0] + w[1];
    }
  }

  double constraint_functional(std::span<const double> x, std::span<const double>) const override {
    return std::max(std::abs(x[0]), std::abs(x[1]));
  }
  bool constraint_is_box() const override { return true; }
  void project_parameters(std::span<double> x, double rho) const override {
    const double half = std::max(0.0, std::min(rho, 1.0));
    for (double& v : x) v = std::clamp(v, -half, half);
  }

  bool image_is_full_space() const override { return full_image_; }

  std::vector<double> lift_residual_norms(std::span<const double>, std::span<const double>,
                                          const ObservationVector& z) const override {
    const std::vector<double> l = data_lift(z);
    return {std::sqrt(dot(l, l))};
  }

  double b_norm(std::span<const double> x, std::span<const double> u) const override {
    return norm2(x) + norm2(u) + norm2(kernel_observation(u));
  }

  double parameter_distance(std::span<const double> x,
                            std::span<const double> xr) const override {
    double n = 0.0, d = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      n += (x[i] - xr[i]) * (x[i] - xr[i]);
      d += xr[i] * xr[i];
    }
    return std::sqrt(n / d);
  }

  std::vector<double> initial_parameters() const override { return {0.0, 0.0}; }

  ObservationVector exact_data(std::span<const double> x_true) const {
    const auto m = model(x_true);
    ObservationVector y;
    y.values = {m[0], m[1]};
    y.blocks = {{"obs", 0, 2}};
    return y;
  }

 private:
  bool full_image_;
};

AdmissibleSetSpec toy_spec(double rho = 1.0) {
  AdmissibleSetSpec s;
  s.tau = 1.5;
  s.rho = rho;
  s.box_lower = {-1.0, -1.0};
  s.box_upper = {1.0, 1.0};
  return s;
}

SolverConfig toy_config() {
  SolverConfig c;
  c.max_iterations = 400;
  c.initial_step = 0.5;
  c.gradient_tolerance = 1e-12;
  c.penalty.initial_weight = 1.0;
  c.penalty.growth = 10.0;
  c.penalty.max_stages = 8;
  return c;
}

}  // namespace

TEST_CASE("choose_alpha: rule values and asymptotics") {
  RegularizationWeights w;
  w.alpha0 = 1.0;
  w.c0 = 10.0;
  REQUIRE(choose_alpha(0.1, w) == Catch::Approx(0.01).epsilon(1e-15));

  w.alpha0 = 5.0;
  w.c0 = 1.0;
  REQUIRE(choose_alpha(1e-3, w) == Catch::Approx(5e-6).epsilon(1e-15));

  REQUIRE_THROWS_WITH(choose_alpha(0.0, w),
                      "exact data: regularization parameter choice undefined");

  // both alpha >= alpha0 delta^2 and delta^2/alpha <= c0 over a log grid
  w.alpha0 = 0.37;
  w.c0 = 2.3;
  for (double d = 1.0; d >= 1e-8; d *= 0.5) {
    const double a = choose_alpha(d, w);
    REQUIRE(a >= w.alpha0 * d * d * (1.0 - 1e-15));
    REQUIRE(d * d / a <= w.c0 * (1.0 + 1e-15));
  }
}

TEST_CASE("discrepancy: max norm with structural checks") {
  ObservationVector a, b;
  a.values = {1.0, 2.0};
  a.blocks = {{"obs", 0, 2}};
  b = a;
  REQUIRE(discrepancy(a, b) == 0.0);

  b.values = {3.0, 1.0};
  REQUIRE(discrepancy(a, b) == 2.0);
  REQUIRE(discrepancy(b, a) == 2.0);

  ObservationVector c, d;
  c.values = {0.0, 0.0, 0.0};
  c.blocks = {{"obs", 0, 3}};
  d.values = {-0.5, 0.2, 0.0};
  d.blocks = {{"obs", 0, 3}};
  REQUIRE(discrepancy(c, d) == 0.5);

  ObservationVector e;
  e.values = {1.0, 2.0};
  e.blocks = {{"other", 0, 2}};
  REQUIRE_THROWS_AS(discrepancy(a, e), std::invalid_argument);

  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    ObservationVector u, v;
    u.blocks = v.blocks = {{"obs", 0, 6}};
    double m = 0.0;
    for (int i = 0; i < 6; ++i) {
      u.values.push_back(rng.uniform(-2.0, 2.0));
      v.values.push_back(rng.uniform(-2.0, 2.0));
      m = std::max(m, std::abs(u.values[i] - v.values[i]));
    }
    REQUIRE(discrepancy(u, v) == m);
    REQUIRE(discrepancy(u, v) == discrepancy(v, u));
    REQUIRE((discrepancy(u, v) == 0.0) == (u.values == v.values));
  }
}

TEST_CASE("smooth max dominates the infinity norm") {
  Rng rng(9);
  for (double beta : {1e3, 1e5}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> v(8);
      for (double& a : v) a = rng.uniform(-2.0, 2.0);
      const double sm = detail::smooth_max(v, beta);
      REQUIRE(sm >= max_abs(v));
      REQUIRE(sm <= max_abs(v) + std::log(2.0 * double(v.size())) / beta + 1e-15);
    }
  }
}

TEST_CASE("assemble_cost: zero at exact pairs, additive in alpha, quadratic in state") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  const ObservationVector y = P.exact_data(xt);
  const auto m = ToyProblem::model(xt);
  const std::vector<double> lift = P.data_lift(y);
  std::vector<double> ut(3);
  for (int i = 0; i < 3; ++i) ut[i] = m[i] - lift[i];

  REQUIRE(assemble_cost(P, xt, ut, y, 0.0) <= 1e-28);

  const double q = assemble_cost(P, xt, ut, y, 0.0);
  const double r = P.regularizer(xt, ut);
  REQUIRE(assemble_cost(P, xt, ut, y, 2.0) == Catch::Approx(q + 2.0 * r).epsilon(1e-14));

  // quadratic growth along a fixed random direction
  Rng rng(11);
  std::vector<double> dir = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                             rng.uniform(-1.0, 1.0)};
  auto cost_at = [&](double eps) {
    std::vector<double> u = ut;
    for (int i = 0; i < 3; ++i) u[i] += eps * dir[i];
    return assemble_cost(P, xt, u, y, 0.0);
  };
  REQUIRE(cost_at(2e-3) / cost_at(1e-3) == Catch::Approx(4.0).epsilon(1e-9));

  std::vector<double> bad = ut;
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_WITH(assemble_cost(P, xt, bad, y, 0.0), "numerical blow-up");
}

TEST_CASE("minimize: recovers the toy parameter and stays feasible") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  ObservationVector y = P.exact_data(xt);
  const ObservationVector yd = inject_noise(P, y, 1e-6, 42);

  const SolverResult res = minimize(P, yd, 1e-8, toy_spec(), toy_config());
  REQUIRE(res.constraint_satisfied);
  REQUIRE(res.discrepancy_value <= 1.05 * 1.5 * 1e-6 + 1e-12);
  REQUIRE(P.parameter_distance(res.parameters, xt) <= 1e-2);

  // penalized cost never increases within a stage
  for (std::size_t s = 0; s < res.stage_starts.size(); ++s) {
    const std::size_t lo = res.stage_starts[s];
    const std::size_t hi =
        s + 1 < res.stage_starts.size() ? res.stage_starts[s + 1] : res.cost_trace.size();
    for (std::size_t k = lo + 1; k < hi; ++k)
      REQUIRE(res.cost_trace[k] <= res.cost_trace[k - 1] + 1e-15);
  }

  // final cost no worse than the feasible initial point (x = 0, u_hat = 0)
  const std::vector<double> x0 = P.initial_parameters(), u0(3, 0.0);
  REQUIRE(res.final_cost <= assemble_cost(P, x0, u0, yd, 1e-8) + 1e-12);
}

TEST_CASE("minimize: monotonicity of the regularizer in alpha") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  const ObservationVector yd = inject_noise(P, P.exact_data(xt), 1e-3, 7);
  const SolverResult strong = minimize(P, yd, 1e6, toy_spec(), toy_config());
  const SolverResult weak = minimize(P, yd, 1e-6, toy_spec(), toy_config());
  REQUIRE(P.regularizer(strong.parameters, strong.kernel_state) <
          P.regularizer(weak.parameters, weak.kernel_state));
}

TEST_CASE("minimize: empty admissible set is flagged infeasible") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  const ObservationVector yd = inject_noise(P, P.exact_data(xt), 1e-3, 3);
  const SolverResult res = minimize(P, yd, 1e-6, toy_spec(/*rho=*/-1.0), toy_config());
  REQUIRE_FALSE(res.constraint_satisfied);
  REQUIRE_FALSE(res.diagnostic.empty());
}

TEST_CASE("minimize: problems without full observation image use the full form") {
  ToyProblem P(/*full_image=*/false);
  const std::vector<double> xt = {0.3, -0.2};
  ObservationVector y = P.exact_data(xt);
  y.values = {0.1, 0.4};  // y0 != y1 so C C^ri != id matters
  const ObservationVector yd = inject_noise(P, y, 1e-2, 15);

  const SolverResult res = minimize(P, yd, 1e-4, toy_spec(), toy_config());
  // discrepancy reported against the data, not the kernel observation alone
  std::vector<double> total = P.data_lift(yd);
  for (int i = 0; i < 3; ++i) total[i] += res.kernel_state[i];
  const std::vector<double> c = P.kernel_observation(total);
  double full = 0.0;
  for (std::size_t j = 0; j < c.size(); ++j)
    full = std::max(full, std::abs(c[j] - yd.values[j]));
  REQUIRE(res.discrepancy_value == Catch::Approx(full).margin(1e-14));
}

TEST_CASE("check_data_continuity: identical data gives a tight zero") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  const ObservationVector y = P.exact_data(xt);
  const std::vector<double> u = {0.05, -0.1, 0.2};
  const auto chk = check_data_continuity(P, xt, u, y, y);
  REQUIRE(chk.lhs == 0.0);
  REQUIRE(chk.bound == 0.0);
  REQUIRE(chk.holds);
}

TEST_CASE("check_data_continuity: random perturbations satisfy the bound") {
  ToyProblem P;
  Rng rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    const std::vector<double> x = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const std::vector<double> u = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                   rng.uniform(-1.0, 1.0)};
    ObservationVector z1, z2;
    z1.blocks = z2.blocks = {{"obs", 0, 2}};
    z1.values = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    z2.values = {z1.values[0] + rng.uniform(-0.1, 0.1), z1.values[1] + rng.uniform(-0.1, 0.1)};
    const auto chk = check_data_continuity(P, x, u, z1, z2);
    REQUIRE(chk.holds);
  }
}

TEST_CASE("check_data_continuity: difference scales at most linearly in epsilon") {
  ToyProblem P;
  const std::vector<double> x = {0.2, 0.1};
  const std::vector<double> u = {0.3, -0.4, 0.6};
  ObservationVector z1;
  z1.blocks = {{"obs", 0, 2}};
  z1.values = {0.3, -0.2};
  double prev_ratio = 0.0;
  for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
    ObservationVector z2 = z1;
    z2.values[0] += eps;
    z2.values[1] -= 0.5 * eps;
    const auto chk = check_data_continuity(P, x, u, z1, z2);
    const double ratio = chk.lhs / eps;
    REQUIRE(ratio <= 10.0);  // bounded as eps -> 0
    if (prev_ratio > 0.0) REQUIRE(ratio <= prev_ratio * 1.5 + 1e-12);
    prev_ratio = ratio;
  }
}

TEST_CASE("inject_noise: exact noise level, deterministic, structure-preserving") {
  ToyProblem P;
  const ObservationVector y = P.exact_data(std::vector<double>{0.3, -0.2});
  const ObservationVector a = inject_noise(P, y, 1e-2, 99);
  const ObservationVector b = inject_noise(P, y, 1e-2, 99);
  REQUIRE(a.values == b.values);
  REQUIRE(discrepancy(y, a) == Catch::Approx(1e-2).epsilon(1e-14));
  REQUIRE(a.noise_level == 1e-2);

  const ObservationVector c = inject_noise(P, y, 1e-2, 100);
  REQUIRE(c.values != a.values);
}

TEST_CASE("run_noise_sweep: report rows, flags, and rule bypass") {
  ToyProblem P;
  const std::vector<double> xt = {0.3, -0.2};
  const ObservationVector y = P.exact_data(xt);
  RegularizationWeights w;
  w.alpha0 = 1.0;
  w.c0 = 1.0;

  const std::vector<double> deltas = {1e-1, 1e-2, 1e-3, 1e-4};
  const ConvergenceReport rep =
      run_noise_sweep(P, y, deltas, w, toy_spec(), toy_config(), xt, 1234);
  REQUIRE(rep.rows.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    REQUIRE(rep.rows[k].delta == deltas[k]);
    REQUIRE(rep.rows[k].feasible);
    REQUIRE(rep.rows[k].ratio_quadratic <= w.c0 * (1.0 + 1e-12));
  }
  REQUIRE(rep.b_norm_bounded);
  REQUIRE(rep.error_decreased);
  REQUIRE_FALSE(rep.rule_violated);

  const ConvergenceReport fixed =
      run_noise_sweep(P, y, deltas, w, toy_spec(), toy_config(), xt, 1234, 1, 0.05);
  REQUIRE(fixed.rule_violated);

  // identical seeds reproduce identical rows bitwise
  const ConvergenceReport rep2 =
      run_noise_sweep(P, y, deltas, w, toy_spec(), toy_config(), xt, 1234);
  for (std::size_t k = 0; k < 4; ++k) {
    REQUIRE(rep.rows[k].error == rep2.rows[k].error);
    REQUIRE(rep.rows[k].b_norm == rep2.rows[k].b_norm);
  }

  // parallel execution gives the same rows
  const ConvergenceReport par =
      run_noise_sweep(P, y, deltas, w, toy_spec(), toy_config(), xt, 1234, 4);
  for (std::size_t k = 0; k < 4; ++k) REQUIRE(par.rows[k].error == rep.rows[k].error);

  REQUIRE_THROWS_AS(
      run_noise_sweep(P, y, {1e-2, 1e-1}, w, toy_spec(), toy_config(), xt, 1),
      std::invalid_argument);
}
