#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "turbolab/ensemble.hpp"
#include "turbolab/noise.hpp"

using namespace turbolab;

namespace {
NoiseGrid small_grid(std::uint64_t seed, int nx = 64, double L = 1.0) {
  NoiseGrid ng;
  ng.grid = {L, nx};
  ng.dt = 1e-3;
  ng.seed = seed;
  return ng;
}
}  // namespace

TEST(WhiteNoise, SameSliceIsIdentical) {
  const auto ng = small_grid(9);
  EXPECT_EQ(sample_white_increments(ng, 17), sample_white_increments(ng, 17));
  EXPECT_NE(sample_white_increments(ng, 17), sample_white_increments(ng, 18));
  EXPECT_THROW(sample_white_increments(ng, -1), ValidationError);
}

TEST(WhiteNoise, VarianceIsDtDx) {
  auto ng = small_grid(3, 1000);
  const double v = ng.dt * ng.grid.dx();
  double s = 0;
  std::int64_t n = 0;
  for (int k = 0; k < 1000; ++k)
    for (double x : sample_white_increments(ng, k)) {
      s += x * x / v;
      ++n;
    }
  EXPECT_EQ(n, 1'000'000);
  EXPECT_NEAR(s / n, 1.0, 0.01);
}

TEST(WhiteNoise, ConsecutiveStepsUncorrelated) {
  auto ng = small_grid(4, 100000);
  const auto a = sample_white_increments(ng, 5), b = sample_white_increments(ng, 6);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t j = 0; j < a.size(); ++j) sab += a[j] * b[j], saa += a[j] * a[j], sbb += b[j] * b[j];
  EXPECT_LT(std::abs(sab / std::sqrt(saa * sbb)), 3.0 / std::sqrt(static_cast<double>(a.size())));
}

TEST(WhiteNoise, CoarseIncrementsAggregateTheBaseLattice) {
  NoiseGrid fine = small_grid(11, 128);
  fine.dt = 1e-3;
  NoiseGrid coarse = fine;
  coarse.grid.nx = 32;
  coarse.dt = 4e-3;
  coarse.refine_x = 4;
  coarse.refine_t = 4;
  for (int k = 0; k < 3; ++k) {
    const auto c = sample_white_increments(coarse, k);
    std::vector<double> sum(32, 0.0);
    for (int b = 0; b < 4; ++b) {
      const auto f = sample_white_increments(fine, 4 * k + b);
      for (int j = 0; j < 128; ++j) sum[j / 4] += f[j];
    }
    for (int j = 0; j < 32; ++j) EXPECT_NEAR(c[j], sum[j], 1e-14);
  }
}

TEST(Mollify, ZeroNoiseGivesZeroField) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 1024});
  const auto p = make_scale_params(cov, 0.25, 1.0, 1.0, 0.0);
  const auto ng = small_grid(1);
  std::vector<double> xi(64, 0.0);
  const auto f = mollify(ng, xi, 0, cov, p);
  for (double v : f.values) EXPECT_EQ(v, 0.0);
}

TEST(Mollify, RejectsUnderResolvedMollifier) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 1024});
  const auto p = make_scale_params(cov, 0.1, 1.0, 1.0, 0.0);
  const auto ng = small_grid(1, 64, 1.0);  // dx = 1/32, 4 dx = 0.125 > eps
  EXPECT_THROW(FieldMollifier(ng.grid, cov, p), ResolutionError);
}

TEST(Mollify, FftPathMatchesDirectSum) {
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 1024});
  const auto p = make_scale_params(cov, 0.5, 0.8, 1.0, 0.0);
  NoiseGrid ng = small_grid(2, 256, 2.0);  // dx = 1/64, support 65 cells
  FieldMollifier m(ng.grid, cov, p);
  ASSERT_TRUE(m.uses_fft());
  const auto xi = sample_white_increments(ng, 0);
  std::vector<double> out(256);
  m.apply(xi, out);
  for (int j = 0; j < 256; ++j) {
    double s = 0;
    for (int i = 0; i < 256; ++i) {
      double d = ng.grid.x(j) - ng.grid.x(i);
      d = ng.grid.wrap(d);
      s += scaled_mollifier(cov, p, d) * xi[i];
    }
    EXPECT_NEAR(out[j], s, 1e-12);
  }
}

TEST(Mollify, ShiftedApplicationIsConsistent) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 1024});
  const auto p = make_scale_params(cov, 0.25, 1.0, 1.0, 0.0);
  const auto ng = small_grid(5, 64, 1.0);
  FieldMollifier m(ng.grid, cov, p);
  const auto xi = sample_white_increments(ng, 0);
  std::vector<double> a(64), b(64), c(64);
  m.apply(xi, a);
  m.apply_shifted(xi, b, 0.0);
  m.apply_shifted(xi, c, 3 * ng.grid.dx());
  for (int j = 0; j < 64; ++j) {
    EXPECT_NEAR(a[j], b[j], 1e-14);
    EXPECT_NEAR(c[j], a[(j + 3) % 64], 1e-14);
  }
}

TEST(Mollify, PointVarianceIsDtTimesScaledC0) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
  const auto p = make_scale_params(cov, 0.25, 0.8, 1.0, 0.0);
  NoiseGrid ng = small_grid(0, 64, 1.0);
  FieldMollifier m(ng.grid, cov, p);
  RunningStats same, far;
  std::vector<double> xi(64), f(64);
  for (std::uint64_t s = 0; s < 100000; ++s) {
    ng.seed = derive_seed(77, s);
    sample_white_increments(ng, 0, xi);
    m.apply(xi, f);
    same.push(f[10] * f[10] / ng.dt);
    far.push(f[10] * f[40] / ng.dt);  // distance 30 dx = 0.94 > 2 eps
  }
  const double c0 = p.mu * p.mu * cov.C0;
  EXPECT_NEAR(same.mean / c0, 1.0, 0.02);
  EXPECT_LT(std::abs(far.mean), 4.0 * far.se());
}

TEST(Mollify, CoupledFamilyCrossCovariance) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 4096});
  const auto p1 = make_scale_params(cov, 0.25, 1.0, 1.0, 0.0);
  const auto p2 = make_scale_params(cov, 0.125, 1.0, 1.0, 0.0);
  NoiseGrid ng = small_grid(0, 128, 1.0);
  RunningStats cross;
  for (std::uint64_t s = 0; s < 100000; ++s) {
    ng.seed = derive_seed(5, s);
    const auto fam = coupled_family(ng, 0, cov, {p1, p2});
    cross.push(fam[0].values[7] * fam[1].values[7] / ng.dt);
  }
  const int n = 200000;
  const double h = 0.5 / n;
  double oracle = 0;
  for (int i = 0; i <= n; ++i) {
    const double z = -0.25 + i * h;
    oracle += (i == 0 || i == n ? 0.5 : 1.0) * scaled_mollifier(cov, p1, z) * scaled_mollifier(cov, p2, z);
  }
  oracle *= h;
  EXPECT_NEAR(cross.mean / oracle, 1.0, 0.03);
}

TEST(Mollify, CoupledFamilySingletonAndPermutation) {
  const auto cov = build_covariance({MollifierShape::Bump, 1.0, 1024});
  const auto p1 = make_scale_params(cov, 0.25, 1.0, 1.0, 0.0);
  const auto p2 = make_scale_params(cov, 0.125, 1.0, 1.0, 0.0);
  const auto ng = small_grid(8, 128, 1.0);
  const auto one = coupled_family(ng, 3, cov, {p1});
  const auto direct = mollify(ng, sample_white_increments(ng, 3), 3, cov, p1);
  EXPECT_EQ(one[0].values, direct.values);
  const auto ab = coupled_family(ng, 3, cov, {p1, p2});
  const auto ba = coupled_family(ng, 3, cov, {p2, p1});
  EXPECT_EQ(ab[0].values, ba[1].values);
  EXPECT_EQ(ab[1].values, ba[0].values);
}

TEST(Mollify, IsometryAgainstMollifiedNorm) {
  // Var(sum_j (f*rho_eps)(x_j) xi_j) = dt ||f||^2_{2,rho_eps}
  const auto cov = build_covariance({MollifierShape::TriangleSmooth, 1.0, 2048});
  const auto p = make_scale_params(cov, 0.25, 1.0, 1.0, 0.0);
  NoiseGrid ng = small_grid(0, 128, 2.0);
  const double dx = ng.grid.dx();
  std::vector<double> f(128), frho(128);
  for (int j = 0; j < 128; ++j) f[j] = std::exp(-ng.grid.x(j) * ng.grid.x(j)) * std::cos(3 * ng.grid.x(j));
  FieldMollifier m(ng.grid, cov, p);
  m.apply(f, frho);
  double norm = 0;
  for (double& v : frho) v *= dx, norm += v * v * dx;
  RunningStats st;
  for (std::uint64_t s = 0; s < 40000; ++s) {
    ng.seed = derive_seed(6, s);
    const auto xi = sample_white_increments(ng, 0);
    double acc = 0;
    for (int j = 0; j < 128; ++j) acc += frho[j] * xi[j];
    st.push(acc * acc / ng.dt);
  }
  EXPECT_NEAR(st.mean / norm, 1.0, 0.03);
}

TEST(NoiseDump, LittleEndianFloat64) {
  const auto path = (std::filesystem::temp_directory_path() / "turbolab_dump.bin").string();
  const std::vector<double> v{1.0, -2.5, 3.25};
  write_f64_le(path, v);
  std::ifstream is(path, std::ios::binary);
  unsigned char bytes[24];
  is.read(reinterpret_cast<char*>(bytes), 24);
  ASSERT_EQ(is.gcount(), 24);
  // 1.0 = 0x3FF0000000000000, least significant byte first
  EXPECT_EQ(bytes[7], 0x3F);
  EXPECT_EQ(bytes[6], 0xF0);
  EXPECT_EQ(bytes[0], 0x00);
  for (int i = 0; i < 3; ++i) {
    double d;
    std::memcpy(&d, bytes + 8 * i, 8);
    EXPECT_EQ(d, v[i]);
  }
  std::filesystem::remove(path);
}
