#pragma once

// Deterministic solvers for the separation density q, the weighted density
// q^lambda, the Duhamel fixed point, and the delta-potential Volterra oracle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "turbolab/covariance.hpp"
#include "turbolab/errors.hpp"
#include "turbolab/grid.hpp"
#include "turbolab/quadrature.hpp"

namespace turbolab {

/// Solver for periodic tridiagonal systems: sub[j] x[j-1] + diag[j] x[j] + sup[j] x[j+1] = r[j]
/// with indices mod n. Factorised once (Sherman-Morrison on top of Thomas).
class CyclicTridiagonal {
public:
  CyclicTridiagonal() = default;
  CyclicTridiagonal(std::vector<double> sub, std::vector<double> diag, std::vector<double> sup)
      : n_(diag.size()), a_(std::move(sub)), c_(std::move(sup)) {
    if (n_ < 3) throw ValidationError("cyclic tridiagonal system needs n >= 3");
    b_ = std::move(diag);
    alpha_ = c_[n_ - 1];  // bottom-left corner
    beta_ = a_[0];        // top-right corner
    gamma_ = -b_[0];
    b_[0] -= gamma_;
    b_[n_ - 1] -= alpha_ * beta_ / gamma_;
    // Thomas factorisation of the modified matrix
    cp_.resize(n_);
    inv_.resize(n_);
    inv_[0] = 1.0 / b_[0];
    cp_[0] = c_[0] * inv_[0];
    for (std::size_t j = 1; j < n_; ++j) {
      inv_[j] = 1.0 / (b_[j] - a_[j] * cp_[j - 1]);
      cp_[j] = c_[j] * inv_[j];
    }
    std::vector<double> u(n_, 0.0);
    u[0] = gamma_;
    u[n_ - 1] = alpha_;
    z_ = u;
    thomas(z_);
    zfac_ = 1.0 + z_[0] + beta_ * z_[n_ - 1] / gamma_;
  }

  void solve(std::span<double> x) const {
    thomas(x);
    const double f = (x[0] + beta_ * x[n_ - 1] / gamma_) / zfac_;
    for (std::size_t j = 0; j < n_; ++j) x[j] -= f * z_[j];
  }

private:
  void thomas(std::span<double> x) const {
    x[0] *= inv_[0];
    for (std::size_t j = 1; j < n_; ++j) x[j] = (x[j] - a_[j] * x[j - 1]) * inv_[j];
    for (std::size_t j = n_ - 1; j-- > 0;) x[j] -= cp_[j] * x[j + 1];
  }

  std::size_t n_ = 0;
  std::vector<double> a_, b_, c_, cp_, inv_, z_;
  double alpha_ = 0, beta_ = 0, gamma_ = 0, zfac_ = 1;
};

struct QSolution {
  GridField values;
  double lambda = 0.0;
  double t = 0.0;
  double q0 = 0.0;    // value at separation 0
  double mass = 0.0;  // int q dy
};

struct QOptions {
  double r_target = 1.0;     // max a_eps dtau / dx^2
  int rannacher_steps = 2;   // leading steps replaced by two implicit-Euler half steps
  std::vector<double> output_times;  // snapshots (nearest step); the final time is always returned
  double negative_tolerance = 1e-6;  // allowed negative mass
};

/// Periodic diffusion operator M q = D2(a q) with a = a_eps on the grid, and its
/// Crank-Nicolson and implicit-Euler (half step) propagators for step tau.
class QPropagator {
public:
  QPropagator(const Grid& grid, std::vector<double> a, double tau) : grid_(grid), a_(std::move(a)), tau_(tau) {
    cn_lhs_ = make(0.5 * tau_);
    ie_half_ = make(0.5 * tau_);  // (I - tau/2 M) is both the CN lhs and the IE half-step matrix
    scratch_.resize(grid.size());
  }

  double tau() const noexcept { return tau_; }
  const std::vector<double>& a() const noexcept { return a_; }

  /// q <- (I - tau/2 M)^{-1} (I + tau/2 M) q
  void crank_nicolson(std::span<double> q) {
    apply_explicit(q, 0.5 * tau_);
    cn_lhs_.solve(q);
  }
  /// q <- (I - tau/2 M)^{-2} q: two implicit-Euler half steps.
  void implicit_pair(std::span<double> q) {
    ie_half_.solve(q);
    ie_half_.solve(q);
  }
  void step(std::span<double> q, bool smoothing) {
    if (smoothing)
      implicit_pair(q);
    else
      crank_nicolson(q);
  }

private:
  CyclicTridiagonal make(double theta_tau) const {
    const std::size_t n = grid_.size();
    const double k = theta_tau / (grid_.dx() * grid_.dx());
    std::vector<double> sub(n), diag(n), sup(n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t jm = j == 0 ? n - 1 : j - 1;
      const std::size_t jp = j == n - 1 ? 0 : j + 1;
      sub[j] = -k * a_[jm];
      diag[j] = 1.0 + 2.0 * k * a_[j];
      sup[j] = -k * a_[jp];
    }
    return CyclicTridiagonal(std::move(sub), std::move(diag), std::move(sup));
  }
  void apply_explicit(std::span<double> q, double theta_tau) {
    const std::size_t n = q.size();
    const double k = theta_tau / (grid_.dx() * grid_.dx());
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t jm = j == 0 ? n - 1 : j - 1;
      const std::size_t jp = j == n - 1 ? 0 : j + 1;
      scratch_[j] = q[j] + k * (a_[jm] * q[jm] - 2.0 * a_[j] * q[j] + a_[jp] * q[jp]);
    }
    std::copy(scratch_.begin(), scratch_.end(), q.begin());
  }

  Grid grid_;
  std::vector<double> a_;
  double tau_;
  CyclicTridiagonal cn_lhs_, ie_half_;
  std::vector<double> scratch_;
};

/// Time grid, coefficients and initial datum shared by the q solvers.
struct QSetup {
  Grid grid;
  std::vector<double> a, potential;  // a_eps(y_j), lambda^2 C^eps(y_j)
  double t0 = 0.0, tau = 0.0, t = 0.0;
  std::int64_t steps = 0;
  std::vector<double> initial;
  int j0 = 0;  // index of y = 0
};

inline QSetup make_q_setup(const CovarianceSpec& cov, const ScaleParams& p, double t, const Grid& grid,
                           const QOptions& opt) {
  grid.validate();
  if (!(t > 0.0)) throw ValidationError("q solver: t must be positive");
  if (!(p.sigma > 0.0)) throw ValidationError("q solver: sigma must be positive (a_eps(0) = sigma^2)");
  const double dx = grid.dx();
  if (dx > p.eps / 8.0 * (1.0 + 1e-12)) throw ResolutionError("q solver: grid must satisfy dx <= eps / 8");
  if (grid.nx % 2 != 0) throw ValidationError("q solver: nx must be even so that y = 0 is a node");
  QSetup s;
  s.grid = grid;
  s.j0 = grid.nx / 2;
  s.a.resize(grid.size());
  s.potential.resize(grid.size());
  double amax = 0.0;
  for (int j = 0; j < grid.nx; ++j) {
    const double y = grid.x(j);
    s.a[j] = a_eps(cov, p, y);
    s.potential[j] = p.lambda * p.lambda * scaled_covariance(cov, p, y);
    amax = std::max(amax, s.a[j]);
  }
  // Smoothed delta: Gaussian of variance 2 sigma^2 t0 with std dev 2 dx, weighted by
  // the potential over [0, t0].
  const double s2 = p.sigma * p.sigma;
  s.t0 = 2.0 * dx * dx / s2;
  if (s.t0 >= 0.1 * t) throw ResolutionError("q solver: initial smoothing time is not small against t");
  s.initial.resize(grid.size());
  double mass = 0.0;
  for (int j = 0; j < grid.nx; ++j) {
    const double y = grid.x(j);
    s.initial[j] = std::exp(-y * y / (4.0 * s2 * s.t0));
    mass += s.initial[j];
  }
  for (int j = 0; j < grid.nx; ++j) s.initial[j] *= std::exp(s.potential[j] * s.t0) / (mass * dx);
  s.t = t;
  s.steps = std::max<std::int64_t>(
      4, static_cast<std::int64_t>(std::ceil((t - s.t0) * amax / (opt.r_target * dx * dx))));
  s.tau = (t - s.t0) / static_cast<double>(s.steps);
  return s;
}

namespace detail {
inline QSolution make_solution(const QSetup& s, std::span<const double> q, double lambda, double t,
                               double negative_tolerance) {
  QSolution out;
  out.values = GridField(s.grid, t);
  std::copy(q.begin(), q.end(), out.values.values.begin());
  out.lambda = lambda;
  out.t = t;
  out.q0 = q[static_cast<std::size_t>(s.j0)];
  out.mass = out.values.mass();
  double neg = 0.0;
  for (double v : q) {
    if (!std::isfinite(v)) throw NumericalError("q solver produced a non-finite value");
    if (v < 0.0) neg -= v;
  }
  if (neg * s.grid.dx() > negative_tolerance)
    throw NumericalError("q solver: negative mass " + std::to_string(neg * s.grid.dx()) +
                         " exceeds tolerance");
  return out;
}

inline std::vector<std::int64_t> output_steps(const QSetup& s, const std::vector<double>& times) {
  std::vector<std::int64_t> k;
  for (double t : times) {
    if (t <= s.t0 || t > s.t + 1e-12) throw ValidationError("q solver: output time outside (t0, t]");
    k.push_back(std::clamp<std::int64_t>(std::llround((t - s.t0) / s.tau), 1, s.steps));
  }
  return k;
}
}  // namespace detail

struct QSeries {
  std::vector<QSolution> snapshots;  // output_times order
  QSolution final;
  double tau = 0.0;
  std::int64_t steps = 0;
};

/// Crank-Nicolson for dq/dt = D2(a_eps q) + lambda^2 C^eps q, the potential
/// Strang-split (half-step exponentials around each diffusion step).
inline QSeries solve_q_lambda_series(const CovarianceSpec& cov, const ScaleParams& p, double t, const Grid& grid,
                                     const QOptions& opt = {}) {
  const QSetup s = make_q_setup(cov, p, t, grid, opt);
  QPropagator prop(grid, s.a, s.tau);
  std::vector<double> half(grid.size());
  bool has_potential = p.lambda != 0.0;
  for (std::size_t j = 0; j < half.size(); ++j) half[j] = std::exp(0.5 * s.tau * s.potential[j]);
  std::vector<double> q = s.initial;
  const auto outs = detail::output_steps(s, opt.output_times);
  QSeries series;
  series.snapshots.resize(outs.size());
  series.tau = s.tau;
  series.steps = s.steps;
  for (std::int64_t m = 1; m <= s.steps; ++m) {
    if (has_potential)
      for (std::size_t j = 0; j < q.size(); ++j) q[j] *= half[j];
    prop.step(q, m <= opt.rannacher_steps);
    if (has_potential)
      for (std::size_t j = 0; j < q.size(); ++j) q[j] *= half[j];
    for (std::size_t o = 0; o < outs.size(); ++o)
      if (outs[o] == m)
        series.snapshots[o] = detail::make_solution(s, q, p.lambda, s.t0 + m * s.tau, opt.negative_tolerance);
  }
  series.final = detail::make_solution(s, q, p.lambda, t, opt.negative_tolerance);
  return series;
}

inline QSolution solve_q_lambda(const CovarianceSpec& cov, const ScaleParams& p, double t, const Grid& grid,
                                const QOptions& opt = {}) {
  return solve_q_lambda_series(cov, p, t, grid, opt).final;
}

/// Transition density of D from 0: the lambda = 0 case of solve_q_lambda.
inline QSolution solve_q(const CovarianceSpec& cov, ScaleParams p, double t, const Grid& grid,
                         const QOptions& opt = {}) {
  p.lambda = 0.0;
  return solve_q_lambda(cov, p, t, grid, opt);
}

struct DuhamelResult {
  QSolution solution;
  int iterations = 0;
  double residual = 0.0;
};

/// Picard iteration of u = q + lambda^2 int_0^t Q(t - s)[C^eps u(s)] ds, where Q is
/// the lambda = 0 propagator (same grid, same time steps). Instead of tabulating
/// q(.; x, y) for every start x in the support of C^eps, the time integral is
/// propagated: with g_m = lambda^2 C^eps u_m and trapezoidal weights,
///   S_1 = Q(tau/2 g_0),  S_{m+1} = Q(S_m + tau g_m),  I_m = S_m + tau/2 g_m.
/// Only the support of C^eps is stored per time level.
inline DuhamelResult duhamel_iterate(const CovarianceSpec& cov, const ScaleParams& p, double t, const Grid& grid,
                                     int max_iter = 60, double tol = 1e-10, const QOptions& opt = {}) {
  const QSetup s = make_q_setup(cov, p, t, grid, opt);
  QPropagator prop(grid, s.a, s.tau);
  const std::size_t n = grid.size();

  // support of the potential
  std::size_t lo = n, hi = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (s.potential[j] != 0.0) {
      lo = std::min(lo, j);
      hi = std::max(hi, j);
    }
  const auto M = static_cast<std::size_t>(s.steps);

  // base_m = Q^m initial, restricted to the support, plus the full final field
  std::vector<double> base_final = s.initial;
  const std::size_t w = lo <= hi ? hi - lo + 1 : 0;
  std::vector<double> base_supp((M + 1) * w), g((M + 1) * w);
  auto store = [&](std::vector<double>& dst, std::size_t m, std::span<const double> src) {
    for (std::size_t j = 0; j < w; ++j) dst[m * w + j] = src[lo + j];
  };
  store(base_supp, 0, base_final);
  for (std::size_t m = 1; m <= M; ++m) {
    prop.step(base_final, static_cast<int>(m) <= opt.rannacher_steps);
    store(base_supp, m, base_final);
  }
  DuhamelResult res;
  if (w == 0) {
    res.solution = detail::make_solution(s, base_final, p.lambda, t, opt.negative_tolerance);
    res.iterations = 1;
    return res;
  }

  // g from the current iterate restricted to the support
  for (std::size_t m = 0; m <= M; ++m)
    for (std::size_t j = 0; j < w; ++j) g[m * w + j] = s.potential[lo + j] * base_supp[m * w + j];

  std::vector<double> S(n), u_supp((M + 1) * w), final_u(n);
  for (int it = 1; it <= max_iter; ++it) {
    std::fill(S.begin(), S.end(), 0.0);
    double change = 0.0;
    double scale = 0.0;
    for (std::size_t m = 0; m <= M; ++m) {
      if (m > 0) {
        // S_m = Q(S_{m-1} + tau * wgt * g_{m-1})
        const double wgt = m == 1 ? 0.5 : 1.0;
        for (std::size_t j = 0; j < w; ++j) S[lo + j] += s.tau * wgt * g[(m - 1) * w + j];
        prop.step(S, static_cast<int>(m) <= opt.rannacher_steps);
      }
      for (std::size_t j = 0; j < w; ++j) {
        const double u = base_supp[m * w + j] + S[lo + j] + 0.5 * s.tau * g[m * w + j];
        u_supp[m * w + j] = u;
      }
    }
    for (std::size_t j = 0; j < n; ++j) final_u[j] = base_final[j] + S[j];
    for (std::size_t j = 0; j < w; ++j) final_u[lo + j] += 0.5 * s.tau * g[M * w + j];
    for (std::size_t m = 0; m <= M; ++m)
      for (std::size_t j = 0; j < w; ++j) {
        const double gn = s.potential[lo + j] * u_supp[m * w + j];
        const double old = s.potential[lo + j] != 0.0 ? g[m * w + j] / s.potential[lo + j] : 0.0;
        change = std::max(change, std::abs(u_supp[m * w + j] - old));
        scale = std::max(scale, std::abs(u_supp[m * w + j]));
        g[m * w + j] = gn;
      }
    res.iterations = it;
    res.residual = change;
    if (change <= tol * std::max(scale, 1.0) || p.lambda == 0.0) {
      res.solution = detail::make_solution(s, final_u, p.lambda, t, opt.negative_tolerance);
      return res;
    }
    if (!std::isfinite(change)) break;
  }
  throw DivergenceError("duhamel_iterate did not converge", res.residual);
}

// ---------------------------------------------------------------- Volterra oracle

struct VolterraValue {
  double value = 0.0;
  double error = 0.0;  // |fine - coarse| Richardson estimate
  double mass = 0.0;   // 1 + kappa^2 int_0^t r
};

namespace detail {
/// r(t) = k(t) + rho(t), k(t) = 1/sqrt(4 pi nu t). Since int_0^t k(t-s) k(s) ds = 1/(4 nu),
///   rho(t) = kappa^2 / (4 nu) + kappa^2 int_0^t k(t-s) rho(s) ds,
/// a second-kind equation with bounded solution. Product trapezoid: rho piecewise
/// linear, moments of (t-s)^{-1/2} exact on every panel. Returns rho_N and int_0^t r.
inline std::pair<double, double> volterra_solve(double kappa, double nu, double t, int n) {
  const double h = t / n;
  const double c = 1.0 / std::sqrt(4.0 * std::numbers::pi * nu);
  const double k2 = kappa * kappa;
  std::vector<double> rho(n + 1);
  rho[0] = k2 / (4.0 * nu);
  // For t_i = i h and panel [s_j, s_{j+1}], with u = t_i - s:
  //   int (t_i - s)^{-1/2} phi_j(s) ds over the panel, phi_j hat functions.
  // Weights in units of sqrt(h): w(i, j) from the linear interpolant.
  auto moments = [](double a, double b) {
    // int_a^b u^{-1/2} du and int_a^b u^{1/2} du, for 0 <= a < b
    return std::pair{2.0 * (std::sqrt(b) - std::sqrt(a)), 2.0 / 3.0 * (b * std::sqrt(b) - a * std::sqrt(a))};
  };
  for (int i = 1; i <= n; ++i) {
    double acc = 0.0;
    double wdiag = 0.0;
    for (int j = 0; j < i; ++j) {
      // s in [j h, (j+1) h], u = i h - s in [(i-j-1) h, (i-j) h]
      const double ua = (i - j - 1), ub = (i - j);
      const auto [m0, m1] = moments(ua, ub);
      // rho(s) = rho_j (s_{j+1} - s)/h + rho_{j+1} (s - s_j)/h; in u units: (s - s_j)/h = (i - j) - u
      const double wj1 = (ub * m0 - m1);  // coefficient of rho_{j+1}
      const double wj = m0 - wj1;         // coefficient of rho_j
      acc += wj * rho[j];
      if (j + 1 < i)
        acc += wj1 * rho[j + 1];
      else
        wdiag = wj1;
    }
    const double sh = std::sqrt(h);
    rho[i] = (k2 / (4.0 * nu) + k2 * c * sh * acc) / (1.0 - k2 * c * sh * wdiag);
  }
  // int_0^t r = int k + int rho = 2 c sqrt(t) + trapezoid(rho)
  double irho = 0.5 * (rho[0] + rho[n]);
  for (int i = 1; i < n; ++i) irho += rho[i];
  irho *= h;
  return {rho[n], 2.0 * c * std::sqrt(t) + irho};
}
}  // namespace detail

/// r(t) = E ||Z(t)||_2^2 for the SHE with coefficients (nu, kappa) from a delta:
/// r(t) = p^{2 nu}_t(0) + kappa^2 int_0^t p^{2 nu}_{t-s}(0) r(s) ds.
inline VolterraValue she_second_moment(double kappa, double nu, double t, int resolution = 4096) {
  if (!(t > 0.0)) throw ValidationError("she_second_moment: t must be positive");
  if (!(nu > 0.0)) throw ValidationError("she_second_moment: nu must be positive");
  if (resolution < 16) throw ResolutionError("she_second_moment: resolution must be >= 16");
  const double pt = 1.0 / std::sqrt(4.0 * std::numbers::pi * nu * t);
  if (kappa == 0.0) return {pt, 0.0, 1.0};
  // panels must resolve the growth scale 1/b^2 of the solution
  const double b = kappa * kappa / (2.0 * std::sqrt(nu));
  if (b * b * t / resolution > 0.05) throw ResolutionError("she_second_moment: resolution too coarse for t");
  const auto [rf, mf] = detail::volterra_solve(kappa, nu, t, resolution);
  const double rc = detail::volterra_solve(kappa, nu, t, resolution / 2).first;
  VolterraValue v;
  v.value = pt + rf;
  v.error = std::abs(rf - rc);
  v.mass = 1.0 + kappa * kappa * mf;
  return v;
}

/// First-order term kappa^2 int_0^t p_{t-s}(0) p_s(0) ds = kappa^2 / (4 nu).
inline double she_second_moment_first_order(double kappa, double nu) { return kappa * kappa / (4.0 * nu); }

// ---------------------------------------------------------------- smoothing error

/// 2 int (q(0) - q(eps y)) rho(y) dy + int (q(eps y) - q(0)) (rho*rho)(y) dy with rho
/// normalised to unit mass; equals E||V - phi_eps * V||^2 for phi_eps the unit-mass
/// rescaled mollifier.
inline double smoothing_error(const QSolution& q, const CovarianceSpec& cov, double eps) {
  if (q.values.grid.dx() > eps / 4.0) throw ResolutionError("smoothing_error: q not resolved at scale eps");
  const double m = cov.rho.mass;
  if (m == 0.0) return 0.0;
  const double q0 = q.values.at(0.0);
  const std::size_t n = cov.rho_table.size() - 1;
  std::vector<double> f1(n + 1), f2(2 * n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double y = -1.0 + cov.h * static_cast<double>(i);
    f1[i] = (q0 - q.values.at(eps * y)) * cov.rho_table[i] / m;
  }
  for (std::size_t i = 0; i <= 2 * n; ++i) {
    const double y = -2.0 + cov.h * static_cast<double>(i);
    f2[i] = (q.values.at(eps * y) - q0) * cov.table[i] / (m * m);
  }
  return 2.0 * quad::simpson(f1, cov.h) + quad::simpson(f2, cov.h);
}

// ---------------------------------------------------------------- Aronson envelope

struct AronsonFit {
  double c = 0.0;
  double C = 0.0;
  std::int64_t violations = 0;
  std::int64_t points = 0;
};

struct AronsonOptions {
  double percentile = 0.001;      // exponents are fit at the 99.9th percentile tightness
  double relative_floor = 1e-10;  // points below floor * max(q) carry no information
  double fit_dy = 0.05;           // spacing of the eps-independent (t, y) lattice
  double min_abs_y = 0.0;         // 0 selects 2 fit_dy
  double violation_slack = 0.0;   // a violation exceeds the envelope by more than this fraction
};

namespace detail {
/// Calls fn(t, y, q) on the lattice y = k fit_dy inside the grid, for every
/// snapshot, skipping values below the information floor. The lattice does not
/// depend on the solver grid, so families at different eps are compared on the
/// same points.
template <class Fn>
void for_aronson_lattice(const std::vector<QSolution>& snapshots, const AronsonOptions& opt, Fn&& fn) {
  if (!(opt.fit_dy > 0.0)) throw ValidationError("aronson: fit_dy must be positive");
  double qmax = 0.0;
  for (const auto& s : snapshots)
    for (double v : s.values.values) qmax = std::max(qmax, v);
  for (const auto& s : snapshots) {
    const Grid& g = s.values.grid;
    const auto kmax = static_cast<int>(std::floor((g.L - g.dx()) / opt.fit_dy));
    for (int k = -kmax; k <= kmax; ++k) {
      const double y = k * opt.fit_dy, v = s.values.at(y);
      if (v > opt.relative_floor * qmax) fn(s.t, y, v);
    }
  }
}

inline bool above_envelope(double t, double y, double v, double c, double C, double slack) {
  return v * std::sqrt(t) * std::exp(c * y * y / (2.0 * t)) > C * (1.0 + slack);
}
}  // namespace detail

/// Fits q(t; 0, y) <= C t^{-1/2} exp(-c y^2 / 2t) over snapshots at several times.
/// For each lattice point the implied exponent relative to the diagonal envelope
/// C0 = max_t q(t, 0) sqrt(t) is c_i = 2t (log C0 - log(q sqrt t)) / y^2; c is the
/// `percentile` quantile of these, C the smallest constant for which the envelope
/// holds on the lattice.
inline AronsonFit aronson_fit(const std::vector<QSolution>& snapshots, const AronsonOptions& opt = {}) {
  if (snapshots.empty()) throw ValidationError("aronson_fit: no snapshots");
  const double ymin = opt.min_abs_y > 0.0 ? opt.min_abs_y : 2.0 * opt.fit_dy;
  double C0 = 0.0;
  for (const auto& s : snapshots) C0 = std::max(C0, s.values.at(0.0) * std::sqrt(s.t));
  std::vector<double> implied;
  detail::for_aronson_lattice(snapshots, opt, [&](double t, double y, double v) {
    if (std::abs(y) >= ymin) implied.push_back(2.0 * t * (std::log(C0) - std::log(v * std::sqrt(t))) / (y * y));
  });
  if (implied.empty()) throw ValidationError("aronson_fit: no informative points");
  std::sort(implied.begin(), implied.end());
  const auto idx = static_cast<std::size_t>(opt.percentile * static_cast<double>(implied.size() - 1));
  AronsonFit fit;
  fit.c = std::max(implied[idx], 0.0);
  detail::for_aronson_lattice(snapshots, opt, [&](double t, double y, double v) {
    fit.C = std::max(fit.C, v * std::sqrt(t) * std::exp(fit.c * y * y / (2.0 * t)));
  });
  detail::for_aronson_lattice(snapshots, opt, [&](double t, double y, double v) {
    ++fit.points;
    if (detail::above_envelope(t, y, v, fit.c, fit.C, opt.violation_slack)) ++fit.violations;
  });
  return fit;
}

struct AronsonCheck {
  std::vector<AronsonFit> per_eps;
  double c = 0.0;  // common envelope: min c, max C over the family
  double C = 0.0;
  std::int64_t violations = 0;  // of the common envelope, all lattice points, all families
  double drift_c = 0.0;         // (max - min) / mean over the family
  double drift_C = 0.0;
};

/// Fits each family (one eps) separately, then checks every family against the
/// common envelope.
inline AronsonCheck aronson_check(const std::vector<std::vector<QSolution>>& families,
                                  const AronsonOptions& opt = {}) {
  AronsonCheck out;
  if (families.empty()) throw ValidationError("aronson_check: no families");
  double cmin = 1e300, cmax = 0, Cmin = 1e300, Cmax = 0, csum = 0, Csum = 0;
  for (const auto& f : families) {
    out.per_eps.push_back(aronson_fit(f, opt));
    const auto& a = out.per_eps.back();
    cmin = std::min(cmin, a.c), cmax = std::max(cmax, a.c), csum += a.c;
    Cmin = std::min(Cmin, a.C), Cmax = std::max(Cmax, a.C), Csum += a.C;
  }
  const double k = static_cast<double>(families.size());
  out.c = cmin;
  out.C = Cmax;
  out.drift_c = (cmax - cmin) / (csum / k);
  out.drift_C = (Cmax - Cmin) / (Csum / k);
  for (const auto& f : families)
    detail::for_aronson_lattice(f, opt, [&](double t, double y, double v) {
      if (detail::above_envelope(t, y, v, out.c, out.C, opt.violation_slack)) ++out.violations;
    });
  return out;
}

}  // namespace turbolab
