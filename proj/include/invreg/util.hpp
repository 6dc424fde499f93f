#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace invreg {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(std::span<const double> v) {
  for (double a : v)
    if (!std::isfinite(a)) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline void axpy(double c, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += c * x[i];
}

/// Shortest unambiguous decimal form; used everywhere doubles are written so
/// that repeated runs produce byte-identical files.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CgResult {
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// Matrix-free conjugate gradients for SPSD systems A x = b.
/// With x0 = 0 the iterates stay in range(A), so consistent singular systems
/// (e.g. potentials defined up to a constant) converge to the minimum-norm
/// solution.
template <class ApplyA>
CgResult conjugate_gradient(ApplyA&& apply, const std::vector<double>& b,
                            std::vector<double>& x, int max_iter, double rel_tol) {
  const std::size_t n = b.size();
  x.assign(n, 0.0);
  std::vector<double> r = b, p = b, ap(n);
  double rr = dot(r, r);
  const double b_norm = std::sqrt(rr);
  CgResult res;
  if (b_norm == 0.0) {
    res.converged = true;
    return res;
  }
  const double stop = rel_tol * b_norm;
  for (int it = 0; it < max_iter; ++it) {
    apply(p, ap);
    const double pap = dot(p, ap);
    if (pap <= 0.0) break;  // null-space direction; b was consistent, done
    const double a = rr / pap;
    axpy(a, p, x);
    axpy(-a, ap, r);
    const double rr_new = dot(r, r);
    res.iterations = it + 1;
    res.residual = std::sqrt(rr_new);
    if (res.residual <= stop) {
      res.converged = true;
      return res;
    }
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  res.residual = std::sqrt(rr);
  res.converged = res.residual <= stop;
  return res;
}

/// Deterministic uniform generator (splitmix64 core). Identical output on
/// every platform, unlike std::uniform_real_distribution.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Uniform integer in [0, n).
  std::size_t next_index(std::size_t n) { return std::size_t(next_u64() % n); }

 private:
  std::uint64_t state_;
};

namespace testing {
/// Self-check hook used by `verify --inject-fault=adjoint`: perturbs one
/// divergence stencil coefficient so the invariant suite must fail.
inline bool broken_adjoint = false;
}  // namespace testing

}  // namespace invreg
