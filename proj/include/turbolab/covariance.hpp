#pragma once

// Mollifier profiles, the covariance C = rho * rho, its scalar functionals and
// the scale parameters (eps, mu, sigma, lambda) that turn C into C^eps.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "turbolab/errors.hpp"
#include "turbolab/quadrature.hpp"

namespace turbolab {

enum class MollifierShape { TriangleSmooth, Bump, TruncatedCosine };

inline std::string_view to_string(MollifierShape s) {
  switch (s) {
    case MollifierShape::TriangleSmooth: return "triangle-smooth";
    case MollifierShape::Bump: return "bump";
    case MollifierShape::TruncatedCosine: return "truncated-cosine";
  }
  return "?";
}

inline MollifierShape parse_shape(std::string_view name) {
  if (name == "triangle-smooth") return MollifierShape::TriangleSmooth;
  if (name == "bump") return MollifierShape::Bump;
  if (name == "truncated-cosine") return MollifierShape::TruncatedCosine;
  throw ValidationError("unknown mollifier shape '" + std::string(name) + "'");
}

/// Unnormalised profile on [-1, 1], zero outside.
///   triangle-smooth:  1 - S(|y|), S the quintic smootherstep (C^2, tent-like)
///   bump:             exp(-1 / (1 - y^2))                     (C^infinity)
///   truncated-cosine: cos^4(pi y / 2)                         (C^3)
inline double mollifier_profile(MollifierShape shape, double y) {
  const double a = std::abs(y);
  if (a >= 1.0) return 0.0;
  switch (shape) {
    case MollifierShape::TriangleSmooth:
      return 1.0 - a * a * a * (10.0 - 15.0 * a + 6.0 * a * a);
    case MollifierShape::Bump:
      return std::exp(-1.0 / (1.0 - a * a));
    case MollifierShape::TruncatedCosine: {
      const double c = std::cos(0.5 * std::numbers::pi * a);
      return c * c * c * c;
    }
  }
  return 0.0;
}

struct MollifierSpec {
  MollifierShape shape = MollifierShape::Bump;
  double mass = 1.0;     // integral of rho
  int samples = 4096;    // intervals across [-1, 1]
};

/// Tabulated covariance. Immutable after build_covariance; share freely.
struct CovarianceSpec {
  MollifierSpec rho;
  double h = 0.0;                 // tabulation step (same for rho and C)
  double rho_scale = 0.0;         // rho(y) = rho_scale * profile(y)
  std::vector<double> rho_table;  // samples + 1 nodes on [-1, 1]
  std::vector<double> table;      // 2 * samples + 1 nodes on [-2, 2]
  double C0 = 0.0;
  double C2 = 0.0;                // C''(0)
  double intC = 0.0;

  /// Linear interpolation of C, zero for |y| >= 2.
  double C(double y) const noexcept {
    const double a = std::abs(y);
    if (a >= 2.0) return 0.0;
    const double s = (a + 2.0) / h;
    auto i = static_cast<std::size_t>(s);
    if (i + 1 >= table.size()) return table.back();
    const double w = s - static_cast<double>(i);
    return table[i] + w * (table[i + 1] - table[i]);
  }

  /// Normalised mollifier, evaluated from the analytic profile.
  double rho_at(double y) const noexcept { return rho_scale * mollifier_profile(rho.shape, y); }
};

namespace detail {

inline CovarianceSpec covariance_from_rho(const MollifierSpec& spec, std::vector<double> rho_table,
                                          double rho_scale) {
  const std::size_t n = rho_table.size() - 1;
  const double h = 2.0 / static_cast<double>(n);
  const double peak = *std::max_element(rho_table.begin(), rho_table.end());
  const double tol = 1e-13 * std::max(peak, 1e-300);
  for (std::size_t i = 0; i <= n; ++i) {
    if (!(rho_table[i] >= -tol)) throw ValidationError("mollifier tabulation is negative");
    if (std::abs(rho_table[i] - rho_table[n - i]) > tol)
      throw ValidationError("mollifier tabulation is not symmetric");
  }
  if (std::abs(rho_table.front()) > tol || std::abs(rho_table.back()) > tol)
    throw ValidationError("mollifier must vanish at |y| = 1");

  CovarianceSpec cov;
  cov.rho = spec;
  cov.h = h;
  cov.rho_scale = rho_scale;
  cov.rho_table = std::move(rho_table);
  const auto& r = cov.rho_table;

  // C(y_k), y_k = -2 + k h. Only k <= 2n/2 is computed; C is even.
  cov.table.assign(2 * n + 1, 0.0);
  for (std::size_t k = 0; k <= n; ++k) {
    // C(y_k) = sum_i rho(x_i) rho(y_k - x_i) h, with x_i = -1 + i h, y_k - x_i = -1 + (k - i) h
    double acc = 0.0;
    for (std::size_t i = 0; i <= k; ++i) acc += r[i] * r[k - i];
    cov.table[k] = acc * h;
    cov.table[2 * n - k] = cov.table[k];
  }
  cov.C0 = cov.table[n];
  cov.intC = 0.0;
  for (double c : cov.table) cov.intC += c;
  cov.intC *= h;
  const auto& t = cov.table;
  cov.C2 = (-t[n - 2] + 16.0 * t[n - 1] - 30.0 * t[n] + 16.0 * t[n + 1] - t[n + 2]) / (12.0 * h * h);

  if (spec.mass != 0.0 && !(cov.C2 < 0.0))
    throw ValidationError("degenerate mollifier: C''(0) must be negative");
  return cov;
}

}  // namespace detail

inline CovarianceSpec build_covariance(const MollifierSpec& spec) {
  if (spec.samples < 8 || spec.samples % 2 != 0)
    throw ValidationError("mollifier.samples must be an even integer >= 8");
  if (!(spec.mass >= 0.0) || !std::isfinite(spec.mass))
    throw ValidationError("mollifier.mass must be finite and non-negative");
  const auto n = static_cast<std::size_t>(spec.samples);
  const double h = 2.0 / static_cast<double>(n);
  std::vector<double> prof(n + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i <= n; ++i) {
    // Mirror so the table is exactly symmetric in floating point.
    const double y = (i <= n / 2) ? -1.0 + h * i : 1.0 - h * (n - i);
    prof[i] = mollifier_profile(spec.shape, y);
    sum += prof[i];
  }
  const double scale = spec.mass / (sum * h);
  for (double& v : prof) v *= scale;
  return detail::covariance_from_rho(spec, std::move(prof), scale);
}

/// Build from a caller-supplied tabulation of rho on [-1, 1] (samples + 1 nodes).
/// Used to validate custom or perturbed profiles; the analytic shape in `spec`
/// is only used by rho_at.
inline CovarianceSpec build_covariance(const MollifierSpec& spec, std::vector<double> rho_table) {
  if (rho_table.size() < 9 || (rho_table.size() - 1) % 2 != 0)
    throw ValidationError("rho tabulation needs an odd number (>= 9) of nodes");
  return detail::covariance_from_rho(spec, std::move(rho_table), 0.0);
}

/// The quintuple (eps, mu, sigma, lambda, nu) with derived kappa_eps and the
/// exponents it was generated from (NaN when set by hand).
struct ScaleParams {
  double eps = 0.1;
  double mu = 1.0;
  double sigma = 1.0;
  double lambda = 0.0;
  double nu = 0.0;
  double kappa_eps = 0.0;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double beta = std::numeric_limits<double>::quiet_NaN();

  /// mu^2 C(0)
  double C0_eps(const CovarianceSpec& cov) const noexcept { return mu * mu * cov.C0; }
};

inline ScaleParams make_scale_params(const CovarianceSpec& cov, double eps, double mu, double sigma,
                                     double lambda) {
  if (!(eps > 0.0 && eps < 1.0)) throw ValidationError("eps must lie in (0, 1)");
  if (!(mu >= 0.0) || !(sigma >= 0.0)) throw ValidationError("mu and sigma must be non-negative");
  if (!(mu > 0.0 || sigma > 0.0)) throw ValidationError("at least one of sigma, mu must be positive");
  if (!std::isfinite(lambda)) throw ValidationError("lambda must be finite");
  ScaleParams p;
  p.eps = eps;
  p.mu = mu;
  p.sigma = sigma;
  p.lambda = lambda;
  p.nu = sigma * sigma + mu * mu * cov.C0;
  p.kappa_eps = lambda * mu * std::sqrt(eps) * cov.rho.mass;
  if (!(p.nu > 0.0)) throw ValidationError("total diffusivity nu must be positive");
  return p;
}

/// C^eps(y) = mu^2 C(y / eps).
inline double scaled_covariance(const CovarianceSpec& cov, const ScaleParams& p, double y) noexcept {
  return p.mu * p.mu * cov.C(y / p.eps);
}

/// rho_eps(y) = eps^{-1/2} mu rho(y / eps); rho_eps * rho_eps = C^eps.
inline double scaled_mollifier(const CovarianceSpec& cov, const ScaleParams& p, double y) noexcept {
  return p.mu / std::sqrt(p.eps) * cov.rho_at(y / p.eps);
}

/// Diffusion coefficient of the separation process: sigma^2 + C^eps(0) - C^eps(y).
inline double a_eps(const CovarianceSpec& cov, const ScaleParams& p, double y) noexcept {
  return p.sigma * p.sigma + p.mu * p.mu * (cov.C0 - cov.C(y / p.eps));
}

/// nu * int C(y) / (sigma^2 + C(0) - C(y)) dy with nu = sigma^2 + C(0).
inline double kappa2_weak_env(const CovarianceSpec& cov, double sigma) {
  if (cov.C0 == 0.0) return 0.0;
  if (!(sigma > 0.0))
    throw SingularityError("kappa2_weak_env: integrand C/(C(0)-C) is not integrable at sigma = 0");
  const double s2 = sigma * sigma;
  std::vector<double> integrand(cov.table.size());
  for (std::size_t k = 0; k < integrand.size(); ++k)
    integrand[k] = cov.table[k] / (s2 + cov.C0 - cov.table[k]);
  return (s2 + cov.C0) * quad::simpson_refined(integrand, cov.h, 1e-8);
}

/// sqrt(2) c nu C(0) / |C''(0)|^{1/2}, with nu = C(0) in the weak-diffusivity limit.
inline double kappa2_weak_diff(const CovarianceSpec& cov, double c) {
  if (!(cov.C2 < 0.0)) throw ValidationError("kappa2_weak_diff: requires C''(0) < 0");
  if (!(c >= 0.0)) throw ValidationError("kappa2_weak_diff: c must be non-negative");
  const double nu = cov.C0;
  return std::numbers::sqrt2 * c * nu * cov.C0 / std::sqrt(std::abs(cov.C2));
}

}  // namespace turbolab
