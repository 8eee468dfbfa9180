#pragma once

// Particle Monte Carlo: the one-point flow through a frozen field realisation,
// the two-point motion (Y1, Y2), the separation D with its Feynman-Kac weight,
// and Brownian local time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "turbolab/covariance.hpp"
#include "turbolab/ensemble.hpp"
#include "turbolab/errors.hpp"
#include "turbolab/grid.hpp"
#include "turbolab/noise.hpp"
#include "turbolab/rng.hpp"

namespace turbolab {

struct MonteCarloEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::int64_t samples = 0;
  bool low_confidence = false;
};

// ---------------------------------------------------------------- one-point flow

struct FlowEnsemble {
  std::vector<double> positions;
  std::vector<unsigned char> flagged;  // 1 once a particle came within 2 eps of the seam
  std::uint64_t field_seed = 0;
  std::uint64_t particle_seed_base = 0;
  double t = 0.0;
  double sigma = 0.0;
  std::int64_t steps = 0;
};

inline FlowEnsemble make_flow_ensemble(std::size_t m, double x0, std::uint64_t field_seed,
                                       std::uint64_t particle_seed_base, double sigma) {
  FlowEnsemble e;
  e.positions.assign(m, x0);
  e.flagged.assign(m, 0);
  e.field_seed = field_seed;
  e.particle_seed_base = particle_seed_base;
  e.sigma = sigma;
  return e;
}

/// X_m += dW(X_m) + sigma sqrt(dt) N_m, dW linearly interpolated from the grid.
/// The Brownian drivers are counter draws keyed by (particle_seed_base, step, particle).
inline void step_flow(FlowEnsemble& e, const FieldIncrement& dW, const Grid& grid, double dt) {
  const double dx = grid.dx();
  const int nx = grid.nx;
  const double sd = e.sigma * std::sqrt(dt);
  const Key2 key = key_from_seed(e.particle_seed_base);
  const auto k = static_cast<std::uint64_t>(e.steps);
  const double seam = grid.L - 2.0 * dW.eps;
  std::array<double, 4> z{};
  for (std::size_t m = 0; m < e.positions.size(); ++m) {
    if (m % 4 == 0)
      z = normals4(Counter4{static_cast<std::uint32_t>(m / 4), static_cast<std::uint32_t>(k),
                            static_cast<std::uint32_t>(k >> 32), 0xF10Bu},
                   key);
    double& x = e.positions[m];
    const double s = (grid.wrap(x) + grid.L) / dx;
    int i = static_cast<int>(std::floor(s));
    const double w = s - i;
    i %= nx;
    const int i1 = (i + 1) % nx;
    x += (1.0 - w) * dW.values[i] + w * dW.values[i1] + sd * z[m % 4];
    if (std::abs(x) >= seam) e.flagged[m] = 1;
  }
  e.t += dt;
  ++e.steps;
}

/// Histogram density on the cells of `bins` (cell j centred at x_j), unflagged particles only.
inline GridField empirical_kernel(const FlowEnsemble& e, const Grid& bins) {
  GridField f(bins, e.t);
  std::size_t used = 0;
  const double dx = bins.dx();
  for (std::size_t m = 0; m < e.positions.size(); ++m) {
    if (e.flagged[m]) continue;
    const double x = bins.wrap(e.positions[m]);
    auto j = static_cast<int>(std::floor((x + bins.L) / dx + 0.5));
    if (j >= bins.nx) j -= bins.nx;
    f.values[static_cast<std::size_t>(j)] += 1.0;
    ++used;
  }
  if (used == 0) throw ValidationError("empirical_kernel: no usable particles");
  for (double& v : f.values) v /= static_cast<double>(used) * dx;
  return f;
}

/// M particles from x0 through one field realisation (field_seed) on `ng`.
class FlowRun {
public:
  FlowRun(const NoiseGrid& ng, const CovarianceSpec& cov, const ScaleParams& p, std::size_t particles,
          double x0, std::uint64_t particle_seed_base)
      : ng_(ng), mollifier_(ng.grid, cov, p), xi_(ng.grid.size()),
        dW_{std::vector<double>(ng.grid.size()), p.eps, 0},
        ens_(make_flow_ensemble(particles, x0, ng.seed, particle_seed_base, p.sigma)) {
    ng_.validate();
  }

  FlowEnsemble& ensemble() noexcept { return ens_; }

  void step() {
    sample_white_increments(ng_, ens_.steps, xi_);
    mollifier_.apply(xi_, dW_.values);
    dW_.time_index = ens_.steps;
    step_flow(ens_, dW_, ng_.grid, ng_.dt);
  }
  void advance_to(double t) {
    while (ens_.t < t - 0.5 * ng_.dt) step();
  }

private:
  NoiseGrid ng_;
  FieldMollifier mollifier_;
  std::vector<double> xi_;
  FieldIncrement dW_;
  FlowEnsemble ens_;
};

// ---------------------------------------------------------------- two-point motion

struct TwoPointPath {
  double y1 = 0.0, y2 = 0.0;
  double A = 0.0;  // lambda^2 int_0^t C^eps(Y1 - Y2) ds
  double t = 0.0;
};

struct TwoPointDiagnostics {
  std::int64_t clamps = 0;
  std::int64_t max_clamps = 1000;
};

inline void check_two_point_dt(const ScaleParams& p, double dt) {
  if (dt > p.eps * p.eps / (10.0 * p.nu) * (1.0 + 1e-12))
    throw ResolutionError("two-point dt must satisfy dt <= eps^2 / (10 nu)");
}

/// One Euler step. The field part has covariance dt [[C^eps(0), c], [c, C^eps(0)]],
/// c = C^eps(Y1 - Y2), plus independent sigma-Brownian parts; both coordinates get
/// drift lambda c dt.
inline void step_two_point(TwoPointPath& path, const ScaleParams& p, const CovarianceSpec& cov, double dt,
                           NormalStream& rng, TwoPointDiagnostics* diag = nullptr) {
  const double nu = p.nu;
  double c = scaled_covariance(cov, p, path.y1 - path.y2);
  double r22 = nu - c * c / nu;
  if (!(r22 >= 0.0)) {
    const double lim = nu * (1.0 - 1e-12);
    c = std::clamp(c, -lim, lim);
    r22 = nu - c * c / nu;
    if (diag && ++diag->clamps > diag->max_clamps)
      throw NumericalError("two-point covariance repeatedly lost positive definiteness");
  }
  const double sdt = std::sqrt(dt);
  const double n1 = rng(), n2 = rng();
  const double d1 = std::sqrt(nu) * n1 * sdt;
  const double d2 = (c / std::sqrt(nu) * n1 + std::sqrt(r22) * n2) * sdt;
  const double drift = p.lambda * c * dt;
  path.y1 += d1 + drift;
  path.y2 += d2 + drift;
  const double c_new = scaled_covariance(cov, p, path.y1 - path.y2);
  path.A += 0.5 * dt * p.lambda * p.lambda * (c + c_new);
  path.t += dt;
}

struct DifferenceState {
  double d = 0.0;
  double A = 0.0;
  double t = 0.0;
};

/// D += sqrt(2 a_eps(D) dt) N, with the Feynman-Kac accumulator A (trapezoidal).
inline void step_difference(DifferenceState& s, const CovarianceSpec& cov, const ScaleParams& p, double dt,
                            NormalStream& rng) {
  const double c0 = scaled_covariance(cov, p, s.d);
  const double a = p.sigma * p.sigma + p.mu * p.mu * cov.C0 - c0;
  s.d += std::sqrt(2.0 * a * dt) * rng();
  const double c1 = scaled_covariance(cov, p, s.d);
  s.A += 0.5 * dt * p.lambda * p.lambda * (c0 + c1);
  s.t += dt;
}

/// min(eps^2 / (10 nu), 1e-4 t_final)
inline double difference_dt(const ScaleParams& p, double t_final) {
  return std::min(p.eps * p.eps / (10.0 * p.nu), 1e-4 * t_final);
}

// ---------------------------------------------------------------- local time

struct LocalTimeEstimate {
  double level = 0.0;
  double h = 0.0;
  double value = 0.0;
};

inline double default_bandwidth(double nu, double dt) { return 8.0 * std::sqrt(2.0 * nu * dt); }

inline void check_bandwidth(double h, double nu, double dt) {
  if (h < 4.0 * std::sqrt(2.0 * nu * dt) * (1.0 - 1e-12))
    throw ResolutionError("local time bandwidth h must be >= 4 sqrt(2 nu dt)");
}

/// Occupation-band estimate of the semimartingale local time at `level` of a
/// process Z with d<Z> = 2 nu dt (the difference of two diffusivity-nu motions):
///   L^y_t ~ 2 nu (1 / 2h) int_0^t 1{|Z_s - y| <= h} ds,
/// by the occupation times formula int f(Z) d<Z> = int f(y) L^y dy. This is the
/// Tanaka normalisation, E L^0_t = E|Z_t| for Z_0 = 0. The time integral uses the
/// trapezoidal rule over samples Z_0, ..., Z_n spaced dt apart.
inline LocalTimeEstimate local_time(std::span<const double> z, double dt, double level, double h, double nu) {
  check_bandwidth(h, nu, dt);
  double count = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k)
    if (std::abs(z[k] - level) <= h) count += (k == 0 || k + 1 == z.size()) ? 0.5 : 1.0;
  return {level, h, 2.0 * nu * count * dt / (2.0 * h)};
}

/// Streaming form of local_time for long paths.
class OccupationBand {
public:
  OccupationBand(double level, double h, double nu, double dt) : level_(level), h_(h), nu_(nu), dt_(dt) {
    check_bandwidth(h, nu, dt);
  }
  /// Pass endpoint = true for the first and last sample of the path.
  void push(double z, bool endpoint = false) noexcept {
    if (std::abs(z - level_) <= h_) count_ += endpoint ? 0.5 : 1.0;
  }
  double value() const noexcept { return 2.0 * nu_ * count_ * dt_ / (2.0 * h_); }
  void reset() noexcept { count_ = 0.0; }

private:
  double level_, h_, nu_, dt_;
  double count_ = 0.0;
};

/// E[L^0_t] = E|Z_t| for Z a Brownian motion with diffusivity 2 nu from 0.
inline double expected_local_time(double nu, double t) {
  return std::sqrt(2.0 * (2.0 * nu) * t / std::numbers::pi);
}

/// Exact expectation of the continuous-time band estimator at level 0:
/// (1/2h) int_{-h}^{h} (E|Z_t - y| - |y|) dy.
inline double expected_band_local_time(double nu, double t, double h) {
  const double s = std::sqrt(2.0 * nu * t);
  // E|Z - y| = s sqrt(2/pi) exp(-y^2 / 2s^2) + y (1 - 2 Phi(-y/s)); integrate with Simpson.
  auto f = [s](double y) {
    const double g = s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-y * y / (2.0 * s * s)) +
                     y * std::erf(y / (s * std::numbers::sqrt2));
    return g - std::abs(y);
  };
  const int n = 2000;
  const double dy = 2.0 * h / n;
  double acc = f(-h) + f(h);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * f(-h + i * dy);
  return acc * dy / 3.0 / (2.0 * h);
}

struct SheOracleOptions {
  std::int64_t replicas = 100000;
  double dt = 1e-4;
  double h = 0.0;  // 0 selects default_bandwidth
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

/// Monte Carlo of E[exp(kappa^2 / (2 nu) L^0_t(B1 - B2)) f(B1_t, B2_t)] with B1, B2
/// independent, each of diffusivity nu, started at 0.
inline MonteCarloEstimate she_limit_oracle(double kappa, double nu, double t,
                                           const std::function<double(double, double)>& f,
                                           const SheOracleOptions& opt = {}) {
  if (!(nu > 0.0) || !(t > 0.0)) throw ValidationError("she_limit_oracle: nu and t must be positive");
  if (kappa * kappa * std::sqrt(t) / (2.0 * nu) > 5.0)
    throw ValidationError("she_limit_oracle: kappa^2 sqrt(t) / (2 nu) > 5, exponential moment too heavy");
  const double h = opt.h > 0.0 ? opt.h : default_bandwidth(nu, opt.dt);
  check_bandwidth(h, nu, opt.dt);
  const auto nsteps = static_cast<std::int64_t>(std::llround(t / opt.dt));
  const double dt = t / static_cast<double>(nsteps);
  const double sd = std::sqrt(nu * dt);
  const double coef = kappa * kappa / (2.0 * nu);

  auto block = [&](std::int64_t first, std::int64_t last) {
    RunningStats st;
    for (std::int64_t r = first; r < last; ++r) {
      NormalStream rng(derive_seed(opt.seed, static_cast<std::uint64_t>(r)), 0);
      double b1 = 0.0, b2 = 0.0;
      OccupationBand band(0.0, h, nu, dt);
      band.push(0.0, true);
      for (std::int64_t k = 1; k <= nsteps; ++k) {
        b1 += sd * rng();
        b2 += sd * rng();
        band.push(b1 - b2, k == nsteps);
      }
      st.push(std::exp(coef * band.value()) * f(b1, b2));
    }
    return st;
  };
  const RunningStats st = run_blocks<RunningStats>(
      opt.replicas, 256, opt.workers, block, [](RunningStats& a, const RunningStats& b) { a.merge(b); });
  MonteCarloEstimate est{st.mean, st.se(), st.n, false};
  est.low_confidence = st.mean != 0.0 && est.se / std::abs(st.mean) > 0.2;
  return est;
}

// ---------------------------------------------------------------- second moment via D

struct TwoPointMomentOptions {
  std::int64_t replicas = 200000;
  double dt = 0.0;          // 0 selects difference_dt(p, t)
  double bandwidth = 0.0;   // 0 selects eps / 10
  std::uint64_t seed = 7;
  unsigned workers = 1;
};

struct TwoPointMoment {
  MonteCarloEstimate q0;    // q^lambda(t, 0)
  MonteCarloEstimate mass;  // E[e^{A_t}] = int q^lambda(t, y) dy
  double bandwidth = 0.0;
  double dt = 0.0;
};

namespace detail {
/// Fourth-order Gaussian kernel (3 - u^2) phi(u) / 2.
inline double gauss4(double u) noexcept {
  return 0.5 * (3.0 - u * u) * std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi);
}
}  // namespace detail

/// q^lambda(t, 0) from the separation process D started at 0.
///
/// Chapman-Kolmogorov at t/2 and reversibility of D with respect to dx / a_eps(x)
/// (the potential is a multiplication operator and does not break symmetry) give
///   q^lambda(t, 0) = (1 / a_eps(0)) int g(x)^2 a_eps(x) dx,   g = q^lambda(t/2, 0, .).
/// With weighted samples (X_i, w_i = e^{A_i}) of D_{t/2}, the integral is estimated
/// by the U-statistic (1/N(N-1)) sum_{i != j} w_i w_j K_h(X_i - X_j) (a_i + a_j) / 2.
/// Pairs are evaluated on a linearly binned grid of spacing h/8; self pairs are
/// removed exactly. The standard error uses the Hoeffding projection. Paths are
/// continued to t to estimate the total mass E[e^{A_t}].
inline TwoPointMoment two_point_second_moment(const CovarianceSpec& cov, const ScaleParams& p, double t,
                                              const TwoPointMomentOptions& opt = {}) {
  if (!(t > 0.0)) throw ValidationError("two_point_second_moment: t must be positive");
  const double dt_req = opt.dt > 0.0 ? opt.dt : difference_dt(p, t);
  const auto half_steps = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(0.5 * t / dt_req)));
  const double dt = 0.5 * t / static_cast<double>(half_steps);
  const double h = opt.bandwidth > 0.0 ? opt.bandwidth : p.eps / 10.0;
  const auto n = opt.replicas;
  if (n < 2) throw ValidationError("two_point_second_moment: need at least 2 replicas");

  struct Block {
    std::vector<double> x, w;
    RunningStats mass;
  };
  auto block = [&](std::int64_t first, std::int64_t last) {
    Block b;
    b.x.reserve(static_cast<std::size_t>(last - first));
    b.w.reserve(static_cast<std::size_t>(last - first));
    for (std::int64_t r = first; r < last; ++r) {
      NormalStream rng(derive_seed(opt.seed, static_cast<std::uint64_t>(r)), 1);
      DifferenceState s;
      for (std::int64_t k = 0; k < half_steps; ++k) step_difference(s, cov, p, dt, rng);
      b.x.push_back(s.d);
      b.w.push_back(std::exp(s.A));
      for (std::int64_t k = 0; k < half_steps; ++k) step_difference(s, cov, p, dt, rng);
      b.mass.push(std::exp(s.A));
    }
    return b;
  };
  Block all = run_blocks<Block>(n, 1024, opt.workers, block, [](Block& acc, const Block& b) {
    acc.x.insert(acc.x.end(), b.x.begin(), b.x.end());
    acc.w.insert(acc.w.end(), b.w.begin(), b.w.end());
    acc.mass.merge(b.mass);
  });

  // linear binning of w and w a
  const double db = h / 8.0;
  const double cut = 6.0 * h;
  const auto [mn, mx] = std::minmax_element(all.x.begin(), all.x.end());
  const double x0 = *mn - cut - 2.0 * db;
  const auto nb = static_cast<std::size_t>(std::ceil((*mx - x0 + cut + 2.0 * db) / db)) + 1;
  std::vector<double> W(nb, 0.0), WA(nb, 0.0);
  std::vector<double> a(all.x.size());
  for (std::size_t i = 0; i < all.x.size(); ++i) {
    a[i] = a_eps(cov, p, all.x[i]);
    const double s = (all.x[i] - x0) / db;
    const auto b = static_cast<std::size_t>(s);
    const double f = s - static_cast<double>(b);
    W[b] += (1.0 - f) * all.w[i];
    W[b + 1] += f * all.w[i];
    WA[b] += (1.0 - f) * all.w[i] * a[i];
    WA[b + 1] += f * all.w[i] * a[i];
  }
  const auto taps = static_cast<int>(std::ceil(cut / db));
  std::vector<double> ker(2 * static_cast<std::size_t>(taps) + 1);
  for (int m = -taps; m <= taps; ++m) ker[m + taps] = detail::gauss4(m * db / h) / h;
  // KW = K * W, KWA = K * WA on the bin grid
  std::vector<double> KW(nb, 0.0), KWA(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    if (W[b] == 0.0 && WA[b] == 0.0) continue;
    const auto lo = static_cast<std::ptrdiff_t>(b) - taps;
    for (int m = -taps; m <= taps; ++m) {
      const auto c = lo + taps + m;
      if (c < 0 || c >= static_cast<std::ptrdiff_t>(nb)) continue;
      KW[static_cast<std::size_t>(c)] += ker[m + taps] * W[b];
      KWA[static_cast<std::size_t>(c)] += ker[m + taps] * WA[b];
    }
  }
  // Per-sample projection h1_i = w_i (a_i KW(X_i) + KWA(X_i)) / 2 minus self pair.
  RunningStats proj;
  double total = 0.0;
  const double k0 = ker[taps], k1 = ker[taps + 1];
  for (std::size_t i = 0; i < all.x.size(); ++i) {
    const double s = (all.x[i] - x0) / db;
    const auto b = static_cast<std::size_t>(s);
    const double f = s - static_cast<double>(b);
    const double kw = (1.0 - f) * KW[b] + f * KW[b + 1];
    const double kwa = (1.0 - f) * KWA[b] + f * KWA[b + 1];
    const double self_k = ((1.0 - f) * (1.0 - f) + f * f) * k0 + 2.0 * f * (1.0 - f) * k1;
    const double self = all.w[i] * all.w[i] * a[i] * self_k;
    const double hi = 0.5 * all.w[i] * (a[i] * kw + kwa) - self;
    total += hi;
    proj.push(hi / static_cast<double>(n - 1));
  }
  const double a0 = a_eps(cov, p, 0.0);
  const double dn = static_cast<double>(n);
  TwoPointMoment out;
  out.q0.mean = total / (dn * (dn - 1.0)) / a0;
  out.q0.se = 2.0 * std::sqrt(proj.variance() / dn) / a0;
  out.q0.samples = n;
  out.mass = {all.mass.mean, all.mass.se(), all.mass.n, false};
  out.bandwidth = h;
  out.dt = dt;
  return out;
}

}  // namespace turbolab
