#pragma once

// Explicit finite-difference solvers on the periodic grid: the transport SPDE
// (lambda_term = 0), the tilted SPDE, and the stochastic heat equation.

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
#include "turbolab/noise.hpp"

namespace turbolab {

/// Gaussian density with variance nu t on the line.
inline double heat_kernel(double nu, double t, double y) {
  if (!(t > 0.0)) throw ValidationError("heat_kernel: t must be positive");
  if (!(nu > 0.0)) throw ValidationError("heat_kernel: nu must be positive");
  const double v = nu * t;
  return std::exp(-y * y / (2.0 * v)) / std::sqrt(2.0 * std::numbers::pi * v);
}

/// Heat kernel periodized over the domain of `grid`; images are added until
/// they fall below 1e-14 relative to the peak.
inline double heat_kernel(double nu, double t, double y, const Grid& grid) {
  const double period = 2.0 * grid.L;
  const double peak = heat_kernel(nu, t, 0.0);
  y = grid.wrap(y);
  double s = heat_kernel(nu, t, y);
  for (int n = 1;; ++n) {
    const double a = heat_kernel(nu, t, y + n * period);
    const double b = heat_kernel(nu, t, y - n * period);
    s += a + b;
    if (a + b < 1e-14 * peak && std::abs(n * period) > std::abs(y) + period) break;
  }
  return s;
}

inline GridField heat_field(const Grid& grid, double nu, double t) {
  GridField f(grid, t);
  for (int j = 0; j < grid.nx; ++j) f.values[j] = heat_kernel(nu, t, grid.x(j), grid);
  return f;
}

/// Smoothed delta: p_{t0}. The default t0 = 4 dx^2 / nu gives std dev 2 dx.
inline GridField init_delta(const Grid& grid, double nu, double t0 = 0.0) {
  const double dx = grid.dx();
  if (t0 == 0.0) t0 = 4.0 * dx * dx / nu;
  if (!(t0 > 0.0)) throw ValidationError("init_delta: t0 must be positive");
  if (std::sqrt(nu * t0) < 2.0 * dx * (1.0 - 1e-12))
    throw ResolutionError("init_delta: std dev of p_t0 is below 2 dx");
  return heat_field(grid, nu, t0);
}

enum class FluxForm { ConservativeCentral, Upwind };

/// Euler: V + lambda V dW. Exponential: V exp(lambda dW - lambda^2 Var(dW) / 2); the factor
/// stays positive with unit mean, which matters once lambda |dW| is not small.
enum class TiltForm { Euler, Exponential };

struct SpdeScheme {
  FluxForm flux_form = FluxForm::ConservativeCentral;
  TiltForm tilt_form = TiltForm::Euler;
  double stability_factor = 0.25;
  /// Undershoot below -negative_tolerance * max triggers no error, only the diagnostic.
  double negative_tolerance = 1e-3;
};

inline double cfl_dt(double dx, double nu, const SpdeScheme& s = {}) {
  return s.stability_factor * dx * dx / nu;
}

inline void check_cfl(double dt, double dx, double nu, const SpdeScheme& s = {}) {
  if (dt > cfl_dt(dx, nu, s) * (1.0 + 1e-12))
    throw CflError("dt = " + std::to_string(dt) + " exceeds the explicit bound " +
                   std::to_string(cfl_dt(dx, nu, s)));
}

/// Heuristic bound for the multiplicative gradient noise: dx / (10 lambda mu sqrt(C0/eps)).
/// With lambda = 0 the transport noise itself still needs a bound; lambda is floored at 1.
inline double noise_dt_bound(double dx, const CovarianceSpec& cov, const ScaleParams& p) {
  const double amp = std::max(std::abs(p.lambda), 1.0) * p.mu * std::sqrt(cov.C0 / p.eps);
  if (amp == 0.0) return std::numeric_limits<double>::infinity();
  return dx / (10.0 * amp);
}

/// Largest admissible explicit step for the (tilted) transport SPDE.
inline double transport_dt(double dx, const CovarianceSpec& cov, const ScaleParams& p,
                           const SpdeScheme& s = {}) {
  return std::min(cfl_dt(dx, p.nu, s), noise_dt_bound(dx, cov, p));
}

namespace detail {
inline void check_finite(std::span<const double> v, std::int64_t time_index) {
  for (double x : v)
    if (!std::isfinite(x)) throw BlowUpError("non-finite value in SPDE state", time_index);
}
}  // namespace detail

/// In-place Euler-Maruyama step of
///   dV = (nu/2) V'' dt + lambda_term V dW - d/dy (V dW)
/// with dW multiplying the pre-step state. `scratch` must have nx entries.
/// `dw_variance` is the per-cell variance of dW, used only by TiltForm::Exponential.
inline void step_transport_inplace(std::span<double> v, std::span<const double> dW, double nu,
                                   double lambda_term, double dt, double dx, const SpdeScheme& scheme,
                                   std::span<double> scratch, std::int64_t time_index = 0,
                                   double dw_variance = 0.0) {
  const int n = static_cast<int>(v.size());
  const double diff = 0.5 * nu * dt / (dx * dx);
  auto& out = scratch;
  const bool exponential = scheme.tilt_form == TiltForm::Exponential && lambda_term != 0.0;
  const double comp = 0.5 * lambda_term * lambda_term * dw_variance;
  auto tilt = [&](int j) {
    return exponential ? v[j] * std::expm1(lambda_term * dW[j] - comp) : lambda_term * v[j] * dW[j];
  };
  if (scheme.flux_form == FluxForm::ConservativeCentral) {
    const double c = 0.5 / dx;
    for (int j = 0; j < n; ++j) {
      const int jm = j == 0 ? n - 1 : j - 1;
      const int jp = j == n - 1 ? 0 : j + 1;
      out[j] = v[j] + diff * (v[jp] - 2.0 * v[j] + v[jm]) + tilt(j) - c * (v[jp] * dW[jp] - v[jm] * dW[jm]);
    }
  } else {
    // donor-cell flux at faces j+1/2 with face velocity the mean of the two cells
    for (int j = 0; j < n; ++j) {
      const int jm = j == 0 ? n - 1 : j - 1;
      const int jp = j == n - 1 ? 0 : j + 1;
      const double ur = 0.5 * (dW[j] + dW[jp]);
      const double ul = 0.5 * (dW[jm] + dW[j]);
      const double fr = ur > 0.0 ? ur * v[j] : ur * v[jp];
      const double fl = ul > 0.0 ? ul * v[jm] : ul * v[j];
      out[j] = v[j] + diff * (v[jp] - 2.0 * v[j] + v[jm]) + tilt(j) - (fr - fl) / dx;
    }
  }
  std::copy(out.begin(), out.end(), v.begin());
  detail::check_finite(v, time_index);
}

inline GridField step_transport(const GridField& state, const FieldIncrement& dW, const ScaleParams& p,
                                double lambda_term, const SpdeScheme& scheme, double dt) {
  check_cfl(dt, state.grid.dx(), p.nu, scheme);
  if (dW.values.size() != state.values.size()) throw ValidationError("noise and state grids differ");
  GridField out = state;
  std::vector<double> scratch(state.values.size());
  step_transport_inplace(out.values, dW.values, p.nu, lambda_term, dt, state.grid.dx(), scheme, scratch,
                         dW.time_index);
  out.t += dt;
  return out;
}

/// In-place step of dZ = (nu/2) Z'' dt + kappa Z xi / dx, xi the white increments.
inline void step_she_inplace(std::span<double> z, std::span<const double> xi, double kappa, double nu,
                             double dt, double dx, std::span<double> scratch,
                             std::int64_t time_index = 0) {
  const int n = static_cast<int>(z.size());
  const double diff = 0.5 * nu * dt / (dx * dx);
  const double k = kappa / dx;
  for (int j = 0; j < n; ++j) {
    const int jm = j == 0 ? n - 1 : j - 1;
    const int jp = j == n - 1 ? 0 : j + 1;
    scratch[j] = z[j] + diff * (z[jp] - 2.0 * z[j] + z[jm]) + k * z[j] * xi[j];
  }
  std::copy(scratch.begin(), scratch.end(), z.begin());
  detail::check_finite(z, time_index);
}

inline GridField step_she(const GridField& state, std::span<const double> xi, double kappa, double nu,
                          const SpdeScheme& scheme, double dt, std::int64_t time_index = 0) {
  check_cfl(dt, state.grid.dx(), nu, scheme);
  GridField out = state;
  std::vector<double> scratch(state.values.size());
  step_she_inplace(out.values, xi, kappa, nu, dt, state.grid.dx(), scratch, time_index);
  out.t += dt;
  return out;
}

/// V(y) = exp(nu lambda^2 t / 2 + lambda y) u(y + lambda nu t), u in the original frame.
/// Throws a ResolutionError when the shifted window leaves the domain while the
/// expected tilted kernel p_t still carries more than 1e-8 mass there.
inline GridField tilt_kernel(const GridField& u, double lambda, double nu) {
  if (lambda == 0.0) return u;
  const Grid& g = u.grid;
  const double t = u.t;
  const double s = lambda * nu * t;
  const double dx = g.dx();
  double lost = 0.0;
  GridField out(g, t);
  for (int j = 0; j < g.nx; ++j) {
    const double y = g.x(j);
    const double src = y + s;
    if (src < -g.L || src >= g.L) {
      lost += heat_kernel(nu, t, y) * dx;
      out.values[j] = 0.0;
      continue;
    }
    out.values[j] = std::exp(0.5 * nu * lambda * lambda * t + lambda * y) * u.at(src);
  }
  if (lost > 1e-8)
    throw ResolutionError("tilt_kernel: shifted window leaves the domain (expected mass lost " +
                          std::to_string(lost) + ")");
  return out;
}

struct InnerProducts {
  double l2 = 0.0;
  double l2_mollified = 0.0;
};

/// (f, g)_2 and (f*rho_eps, g*rho_eps)_2 with circular convolution.
inline InnerProducts inner_products(const GridField& f, const GridField& g, FieldMollifier& rho_eps) {
  if (!(f.grid == g.grid)) throw ValidationError("inner_products: grids differ");
  const double dx = f.grid.dx();
  InnerProducts r;
  for (std::size_t j = 0; j < f.values.size(); ++j) r.l2 += f.values[j] * g.values[j];
  r.l2 *= dx;
  std::vector<double> fr(f.values.size()), gr(g.values.size());
  rho_eps.apply(f.values, fr);
  rho_eps.apply(g.values, gr);
  for (std::size_t j = 0; j < fr.size(); ++j) r.l2_mollified += fr[j] * gr[j];
  r.l2_mollified *= dx * dx * dx;  // one dx per convolution, one for the outer sum
  return r;
}

/// One realisation of the (tilted) transport SPDE driven by the seeded noise.
/// With `frame_speed` != 0 the noise is read in a frame moving at that speed:
/// at step k the field is W^eps(x + frame_speed * k dt).
class TransportRun {
public:
  TransportRun(const NoiseGrid& ng, const CovarianceSpec& cov, const ScaleParams& p, double lambda_term,
               const SpdeScheme& scheme = {}, double frame_speed = 0.0)
      : ng_(ng), p_(p), lambda_term_(lambda_term), scheme_(scheme), frame_speed_(frame_speed),
        mollifier_(ng.grid, cov, p), xi_(ng.grid.size()), dW_(ng.grid.size()), scratch_(ng.grid.size()) {
    ng_.validate();
    check_cfl(ng.dt, ng.grid.dx(), p.nu, scheme);
    state_ = init_delta(ng.grid, p.nu);
    for (double k : mollifier_.kernel()) dw_variance_ += k * k;
    dw_variance_ *= ng.grid.dx() * ng.dt;
  }

  GridField& state() noexcept { return state_; }
  const GridField& state() const noexcept { return state_; }
  std::int64_t steps() const noexcept { return k_; }
  const std::vector<double>& last_increment() const noexcept { return dW_; }

  void step() {
    sample_white_increments(ng_, k_, xi_);
    if (frame_speed_ != 0.0)
      mollifier_.apply_shifted(xi_, dW_, frame_speed_ * static_cast<double>(k_) * ng_.dt);
    else
      mollifier_.apply(xi_, dW_);
    step_transport_inplace(state_.values, dW_, p_.nu, lambda_term_, ng_.dt, ng_.grid.dx(), scheme_,
                           scratch_, k_, dw_variance_);
    ++k_;
    state_.t += ng_.dt;
  }

  /// Advance until state().t >= t - dt/2; returns the number of steps taken.
  std::int64_t advance_to(double t) {
    std::int64_t n = 0;
    while (state_.t < t - 0.5 * ng_.dt) {
      step();
      ++n;
    }
    return n;
  }

private:
  NoiseGrid ng_;
  ScaleParams p_;
  double lambda_term_;
  SpdeScheme scheme_;
  double frame_speed_;
  FieldMollifier mollifier_;
  GridField state_;
  std::vector<double> xi_, dW_, scratch_;
  double dw_variance_ = 0.0;
  std::int64_t k_ = 0;
};

/// Negative mass diagnostic: -sum of negative values times dx.
inline double negative_mass(const GridField& f) noexcept {
  double s = 0.0;
  for (double v : f.values)
    if (v < 0.0) s -= v;
  return s * f.grid.dx();
}

}  // namespace turbolab
