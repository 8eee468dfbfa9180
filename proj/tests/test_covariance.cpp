#include <gtest/gtest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <numbers>

#include "turbolab/covariance.hpp"

using namespace turbolab;

namespace {

// Analytic profiles and derivatives, independent of the library's tabulation.
double bump(double y) { return std::abs(y) < 1 ? std::exp(-1.0 / (1.0 - y * y)) : 0.0; }
double bump_d(double y) {
  if (std::abs(y) >= 1) return 0.0;
  const double d = 1.0 - y * y;
  return bump(y) * (-2.0 * y / (d * d));
}
double tri(double y) {
  const double a = std::abs(y);
  return a < 1 ? 1.0 - (6 * a * a * a * a * a - 15 * a * a * a * a + 10 * a * a * a) : 0.0;
}
double tri_d(double y) {
  const double a = std::abs(y);
  if (a >= 1) return 0.0;
  const double ds = 30 * a * a * a * a - 60 * a * a * a + 30 * a * a;
  return -(y < 0 ? -1.0 : 1.0) * ds;
}

template <class F>
double integrate(F f) {
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate(f, -1.0, 1.0);
}

const MollifierShape kShapes[] = {MollifierShape::TriangleSmooth, MollifierShape::Bump,
                                  MollifierShape::TruncatedCosine};

}  // namespace

TEST(Covariance, ShapeNamesRoundTrip) {
  for (auto s : kShapes) EXPECT_EQ(parse_shape(to_string(s)), s);
  EXPECT_THROW(parse_shape("gaussian"), ValidationError);
}

TEST(Covariance, IntegralIsMassSquared) {
  for (auto s : kShapes)
    for (double m : {1.0, 0.5, 2.0}) {
      const auto cov = build_covariance({s, m, 4096});
      EXPECT_NEAR(cov.intC, m * m, 1e-12 * m * m) << to_string(s);
    }
}

TEST(Covariance, TriangleSmoothMassOneGivesUnitIntegral) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
  EXPECT_NEAR(cov.intC, 1.0, 1e-13);
}

TEST(Covariance, TableIsEvenNonNegativeAndPeakedAtZero) {
  for (auto s : kShapes) {
    const auto cov = build_covariance({s, 1.0, 1024});
    const std::size_t n = cov.table.size() - 1;
    for (std::size_t k = 0; k <= n; ++k) {
      EXPECT_EQ(cov.table[k], cov.table[n - k]);
      EXPECT_GE(cov.table[k], 0.0);
      EXPECT_LE(cov.table[k], cov.C0);
    }
    EXPECT_EQ(cov.table.front(), 0.0);
    EXPECT_LT(cov.C2, 0.0);
  }
}

TEST(Covariance, ConvolutionIdentityOnGrid) {
  // C(y_k) against an independent O(n^2) convolution over the mollifier table.
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 512});
  const auto& r = cov.rho_table;
  const int n = static_cast<int>(r.size()) - 1;
  for (int k = 0; k <= 2 * n; k += 7) {
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const int jj = k - i;
      if (jj >= 0 && jj <= n) s += r[i] * r[jj];
    }
    EXPECT_NEAR(cov.table[k], s * cov.h, 1e-14);
  }
}

TEST(Covariance, BumpC0MatchesIndependentQuadrature) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
  const double mass = integrate(bump);
  const double c0 = integrate([](double y) { return bump(y) * bump(y); }) / (mass * mass);
  EXPECT_NEAR(cov.C0, c0, 1e-10);
}

TEST(Covariance, C2MatchesMinusIntegralOfDerivativeSquared) {
  {
    const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
    const double mass = integrate(bump);
    const double c2 = -integrate([](double y) { return bump_d(y) * bump_d(y); }) / (mass * mass);
    EXPECT_NEAR(cov.C2, c2, 1e-8 * std::abs(c2));
  }
  {
    const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
    const double mass = integrate(tri);
    const double c2 = -integrate([](double y) { return tri_d(y) * tri_d(y); }) / (mass * mass);
    EXPECT_NEAR(cov.C2, c2, 1e-6 * std::abs(c2));
  }
}

TEST(Covariance, InterpolationReproducesNodesAndVanishesOutside) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
  for (int k = 0; k < static_cast<int>(cov.table.size()); k += 97)
    EXPECT_NEAR(cov.C(-2.0 + k * cov.h), cov.table[k], 1e-15);
  EXPECT_EQ(cov.C(2.0), 0.0);
  EXPECT_EQ(cov.C(-3.0), 0.0);
  EXPECT_EQ(cov.C(0.0), cov.C0);
}

TEST(Covariance, RejectsBadTabulations) {
  MollifierSpec spec{MollifierShape::Bump, 1.0, 16};
  std::vector<double> asym(17, 0.0);
  for (int i = 1; i < 16; ++i) asym[i] = 1.0 + 0.01 * i;
  EXPECT_THROW(build_covariance(spec, asym), ValidationError);

  std::vector<double> neg(17, 0.0);
  for (int i = 1; i < 16; ++i) neg[i] = 1.0;
  neg[8] = -0.5;
  EXPECT_THROW(build_covariance(spec, neg), ValidationError);

  std::vector<double> zero(17, 0.0);
  EXPECT_THROW(build_covariance(spec, zero), ValidationError);  // C'' (0) = 0

  std::vector<double> ok(17, 0.0);
  for (int i = 1; i < 16; ++i) ok[i] = std::min(i, 16 - i);
  EXPECT_NO_THROW(build_covariance(spec, ok));

  EXPECT_THROW(build_covariance({MollifierShape::Bump, 1.0, 7}), ValidationError);
  EXPECT_THROW(build_covariance({MollifierShape::Bump, -1.0, 64}), ValidationError);
}

TEST(Covariance, ZeroMassIsNullEnvironment) {
  const auto cov = build_covariance({MollifierShape::Bump, 0.0, 256});
  EXPECT_EQ(cov.C0, 0.0);
  EXPECT_EQ(cov.intC, 0.0);
  EXPECT_EQ(kappa2_weak_env(cov, 1.0), 0.0);
}

TEST(Covariance, ScaledCovarianceAndDiffusion) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
  const auto p = make_scale_params(cov, 0.1, 1.0, 0.5, 2.0);
  EXPECT_DOUBLE_EQ(p.nu, 0.25 + cov.C0);
  EXPECT_NEAR(p.kappa_eps, 2.0 * std::sqrt(0.1), 1e-15);
  EXPECT_DOUBLE_EQ(scaled_covariance(cov, p, 0.0), cov.C0);
  EXPECT_EQ(scaled_covariance(cov, p, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(scaled_covariance(cov, p, 0.05), cov.C(0.5));
  EXPECT_DOUBLE_EQ(a_eps(cov, p, 0.0), 0.25);
  EXPECT_DOUBLE_EQ(a_eps(cov, p, 0.25), p.nu);
  const double mid = a_eps(cov, p, 0.1);
  EXPECT_GT(mid, 0.25);
  EXPECT_LT(mid, p.nu);
  for (double y = -0.3; y <= 0.3; y += 0.0137) {
    EXPECT_DOUBLE_EQ(scaled_covariance(cov, p, y), scaled_covariance(cov, p, -y));
    EXPECT_GE(a_eps(cov, p, y), 0.25);
    EXPECT_LE(a_eps(cov, p, y), p.nu);
  }
}

TEST(Covariance, ScaledMollifierSquaresToScaledCovariance) {
  // int rho_eps(x) rho_eps(y - x) dx = C^eps(y), checked by trapezoid on a fine line.
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
  const auto p = make_scale_params(cov, 0.2, 0.7, 1.0, 0.0);
  for (double y : {0.0, 0.05, 0.13, 0.3}) {
    const int n = 20000;
    const double a = -0.2, h = 0.4 / n;
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = a + i * h;
      s += (i == 0 || i == n ? 0.5 : 1.0) * scaled_mollifier(cov, p, x) * scaled_mollifier(cov, p, y - x);
    }
    EXPECT_NEAR(s * h, scaled_covariance(cov, p, y), 2e-6);
  }
}

TEST(Covariance, ScaleParamValidation) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 256});
  EXPECT_THROW(make_scale_params(cov, 0.0, 1, 1, 1), ValidationError);
  EXPECT_THROW(make_scale_params(cov, 1.0, 1, 1, 1), ValidationError);
  EXPECT_THROW(make_scale_params(cov, 0.1, 0, 0, 1), ValidationError);
  EXPECT_THROW(make_scale_params(cov, 0.1, -1, 1, 1), ValidationError);
}

TEST(Kappa2, WeakEnvironmentSingularAtZeroSigma) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 1024});
  EXPECT_THROW(kappa2_weak_env(cov, 0.0), SingularityError);
}

TEST(Kappa2, WeakEnvironmentLargeSigmaLimit) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
  const double sigma = std::sqrt(100.0 * cov.C0);
  // nu / (sigma^2 + C(0) - C(y)) -> 1, so kappa^2 itself tends to int C.
  const double k2 = kappa2_weak_env(cov, sigma);
  EXPECT_NEAR(k2 / cov.intC, 1.0, 0.01);
}

TEST(Kappa2, WeakEnvironmentMatchesDoubleResolutionRiemannSum) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 4096});
  const double k2 = kappa2_weak_env(cov, 1.0);
  ASSERT_GT(k2, 0.0);
  // Independent oracle: C rebuilt at 8192 samples, plain Riemann sum.
  const auto fine = build_covariance({MollifierShape::TriangleSmooth, 1.0, 8192});
  double s = 0.0;
  for (double c : fine.table) s += c / (1.0 + fine.C0 - c);
  const double oracle = (1.0 + fine.C0) * s * fine.h;
  EXPECT_NEAR(k2, oracle, 1e-6 * oracle);
}

TEST(Kappa2, WeakEnvironmentDecreasesInSigma) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 2048});
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) {
    const double k2 = kappa2_weak_env(cov, s);
    EXPECT_LT(k2, prev);
    prev = k2;
  }
}

TEST(Kappa2, WeakDiffusivityFormula) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
  EXPECT_EQ(kappa2_weak_diff(cov, 0.0), 0.0);
  EXPECT_NEAR(kappa2_weak_diff(cov, 2.0), 2.0 * kappa2_weak_diff(cov, 1.0), 1e-14);
  // Recompute C0 and C''(0) independently: quadrature for C0, second difference of
  // the analytic autocorrelation for C''(0).
  const double mass = integrate(bump);
  auto C = [&](double y) {
    return integrate([&](double x) { return bump(x) * bump(y - x); }) / (mass * mass);
  };
  const double c0 = C(0.0);
  const double h = 1e-3;
  const double c2 = (-C(2 * h) + 16 * C(h) - 30 * c0 + 16 * C(-h) - C(-2 * h)) / (12 * h * h);
  const double expect = std::numbers::sqrt2 * 0.7 * c0 * c0 / std::sqrt(std::abs(c2));
  EXPECT_NEAR(kappa2_weak_diff(cov, 0.7), expect, 1e-8 * expect);
  EXPECT_THROW(kappa2_weak_diff(cov, -1.0), ValidationError);
}
