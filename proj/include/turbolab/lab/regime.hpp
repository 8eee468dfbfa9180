#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "turbolab/covariance.hpp"
#include "turbolab/errors.hpp"

namespace turbolab::lab {

enum class Side { WeakEnv, Neutral, WeakDiff };
enum class Regime { WeakDisorder, CriticalProven, CriticalConjectured, StrongDisorder, StickyBoundary, ArratiaBoundary };

inline std::string to_string(Side s) {
  switch (s) {
    case Side::WeakEnv: return "weak-env";
    case Side::Neutral: return "neutral";
    case Side::WeakDiff: return "weak-diff";
  }
  return "?";
}

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::WeakDisorder: return "weak-disorder";
    case Regime::CriticalProven: return "critical-SHE-proven";
    case Regime::CriticalConjectured: return "critical-SHE-conjectured";
    case Regime::StrongDisorder: return "strong-disorder";
    case Regime::StickyBoundary: return "sticky-boundary";
    case Regime::ArratiaBoundary: return "arratia-boundary";
  }
  return "?";
}

/// Exponents of mu / sigma (alpha) and of lambda (beta) as eps -> 0.
struct RegimePoint {
  double alpha = 0.0;
  double beta = 0.0;

  Side side() const noexcept { return alpha < 0.0 ? Side::WeakEnv : alpha > 0.0 ? Side::WeakDiff : Side::Neutral; }
};

inline constexpr double kLineTolerance = 1e-9;

/// Critical value of beta at this alpha: 1/2 - alpha on the left, (1 - alpha)/2 on the right.
inline double critical_beta(double alpha) noexcept { return alpha <= 0.0 ? 0.5 - alpha : 0.5 * (1.0 - alpha); }

/// The left-quadrant line is proven except at its endpoint alpha = 0, the point
/// (0, 1/2) shared with the right-quadrant line, which is reported as conjectured.
inline Regime classify_regime(const RegimePoint& pt) {
  if (!(pt.beta >= 0.0)) throw ValidationError("classify_regime: beta must be non-negative");
  if (!std::isfinite(pt.alpha)) throw ValidationError("classify_regime: alpha must be finite");
  if (std::abs(pt.beta) <= kLineTolerance) {
    if (std::abs(pt.alpha - 1.0) <= kLineTolerance) return Regime::StickyBoundary;
    if (pt.alpha > 1.0) return Regime::ArratiaBoundary;
  }
  const double line = critical_beta(pt.alpha);
  if (std::abs(pt.beta - line) <= kLineTolerance)
    return pt.alpha < -kLineTolerance ? Regime::CriticalProven : Regime::CriticalConjectured;
  return pt.beta < line ? Regime::WeakDisorder : Regime::StrongDisorder;
}

/// Prefactors of the power laws; the exponents come from the RegimePoint.
struct ScheduleBase {
  double mu = 1.0, sigma = 1.0, lambda = 1.0;
  double kappa_target = 0.0;  // > 0: on a critical line lambda is set so that kappa_eps equals it
  double nu_target = 0.0;     // > 0: sigma is set so that nu(eps) equals it
};

struct ScheduleEntry {
  ScaleParams params;
  double hypothesis = 0.0;  // mu(eps) sqrt(log(1/eps)); must decrease along the proven line
};

/// mu = mu0 eps^max(-alpha, 0) (times 1/log(1/eps) on the proven line),
/// sigma = sigma0 eps^max(alpha, 0), lambda = lambda0 eps^-beta. On a critical
/// line with a kappa target, lambda = kappa / (mu sqrt(eps) int rho) instead.
inline std::vector<ScheduleEntry> schedule(const RegimePoint& pt, const std::vector<double>& eps_list,
                                           const CovarianceSpec& cov, const ScheduleBase& base) {
  if (eps_list.empty()) throw ValidationError("schedule: empty eps list");
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    if (!(eps_list[i] > 0.0 && eps_list[i] < 1.0)) throw ValidationError("schedule: eps must lie in (0, 1)");
    if (i && !(eps_list[i] < eps_list[i - 1])) throw ValidationError("schedule: eps list must be strictly decreasing");
  }
  const Regime regime = classify_regime(pt);
  const bool proven = regime == Regime::CriticalProven;
  const bool critical = proven || regime == Regime::CriticalConjectured;
  std::vector<ScheduleEntry> out;
  for (double eps : eps_list) {
    double mu = base.mu * std::pow(eps, std::max(-pt.alpha, 0.0));
    if (proven) mu /= std::log(1.0 / eps);
    double sigma = base.sigma * std::pow(eps, std::max(pt.alpha, 0.0));
    if (base.nu_target > 0.0) {
      const double s2 = base.nu_target - mu * mu * cov.C0;
      if (!(s2 > 0.0))
        throw ValidationError("schedule: nu target " + std::to_string(base.nu_target) +
                              " is below mu^2 C(0) at eps = " + std::to_string(eps));
      sigma = std::sqrt(s2);
    }
    double lambda = base.lambda * std::pow(eps, -pt.beta);
    if (critical && base.kappa_target > 0.0) {
      if (!(mu > 0.0) || cov.rho.mass == 0.0)
        throw ValidationError("schedule: a kappa target needs mu > 0 and a mollifier of positive mass");
      lambda = base.kappa_target / (mu * std::sqrt(eps) * cov.rho.mass);
    }
    ScheduleEntry e;
    e.params = make_scale_params(cov, eps, mu, sigma, lambda);
    e.hypothesis = mu * std::sqrt(std::log(1.0 / eps));
    out.push_back(e);
  }
  return out;
}

/// True when mu(eps) sqrt(log(1/eps)) strictly decreases along the schedule.
inline bool hypothesis_decreasing(const std::vector<ScheduleEntry>& s) {
  for (std::size_t i = 1; i < s.size(); ++i)
    if (!(s[i].hypothesis < s[i - 1].hypothesis)) return false;
  return true;
}

}  // namespace turbolab::lab
