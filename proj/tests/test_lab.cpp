#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "turbolab/lab/experiment.hpp"

using namespace turbolab;
using namespace turbolab::lab;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("turbolab_test_" + name);
  std::filesystem::remove_all(d);
  return d;
}

LabConfig small_mean_kernel() {
  LabConfig c;
  c.L = 4.0;
  c.nx = 64;
  c.eps_list = {0.5};
  c.times = {0.1, 0.2};
  c.replicas = 40;
  c.lambda = 1.0;
  c.workers = 1;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- classification

TEST(Classify, DocumentedExamples) {
  EXPECT_EQ(classify_regime({-0.5, 1.0}), Regime::CriticalProven);
  EXPECT_EQ(classify_regime({0.0, 0.5}), Regime::CriticalConjectured);
  EXPECT_EQ(classify_regime({0.0, 0.25}), Regime::WeakDisorder);
  EXPECT_EQ(classify_regime({0.5, 0.25}), Regime::CriticalConjectured);
  EXPECT_EQ(classify_regime({0.5, 0.1}), Regime::WeakDisorder);
  EXPECT_EQ(classify_regime({-1.0, 2.0}), Regime::StrongDisorder);
  EXPECT_EQ(classify_regime({1.0, 0.0}), Regime::StickyBoundary);
  EXPECT_EQ(classify_regime({1.5, 0.0}), Regime::ArratiaBoundary);
  EXPECT_THROW(classify_regime({0.0, -0.1}), ValidationError);
}

TEST(Classify, LineIsContinuousAtTheOrigin) {
  EXPECT_DOUBLE_EQ(critical_beta(0.0), 0.5);
  EXPECT_NEAR(critical_beta(-1e-12), 0.5, 1e-11);
  EXPECT_NEAR(critical_beta(1e-12), 0.5, 1e-11);
  EXPECT_EQ(RegimePoint({-0.1, 0}).side(), Side::WeakEnv);
  EXPECT_EQ(RegimePoint({0.1, 0}).side(), Side::WeakDiff);
  EXPECT_EQ(RegimePoint({0.0, 0}).side(), Side::Neutral);
}

TEST(Classify, BelowAndAboveTheLine) {
  for (double a : {-2.0, -1.0, -0.3, 0.2, 0.7}) {
    EXPECT_EQ(classify_regime({a, critical_beta(a) - 0.05}), Regime::WeakDisorder) << a;
    EXPECT_EQ(classify_regime({a, critical_beta(a) + 0.05}), Regime::StrongDisorder) << a;
  }
}

// ---------------------------------------------------------------- schedule

TEST(Schedule, KappaTargetIsHitOnTheProvenLine) {
  const auto cov = build_covariance({});
  ScheduleBase base;
  base.kappa_target = 1.0;
  base.nu_target = 1.0;
  const auto s = schedule({-0.5, 1.0}, {0.2, 0.1, 0.05, 0.025}, cov, base);
  for (const auto& e : s) {
    // independent recomputation of int rho_eps and nu
    const double int_rho = e.params.mu * std::sqrt(e.params.eps) * cov.rho.mass;
    EXPECT_NEAR(e.params.lambda * int_rho, 1.0, 1e-12);
    EXPECT_NEAR(e.params.sigma * e.params.sigma + e.params.mu * e.params.mu * cov.C0, 1.0, 1e-12);
    EXPECT_NEAR(e.params.mu, std::sqrt(e.params.eps) / std::log(1.0 / e.params.eps), 1e-15);
  }
  EXPECT_TRUE(hypothesis_decreasing(s));
}

TEST(Schedule, PowerLawsOffTheLine) {
  const auto cov = build_covariance({});
  ScheduleBase base{2.0, 3.0, 0.5, 0.0, 0.0};
  const auto s = schedule({0.3, 0.1}, {0.5, 0.25}, cov, base);
  for (const auto& e : s) {
    EXPECT_NEAR(e.params.mu, 2.0, 1e-15);
    EXPECT_NEAR(e.params.sigma, 3.0 * std::pow(e.params.eps, 0.3), 1e-14);
    EXPECT_NEAR(e.params.lambda, 0.5 * std::pow(e.params.eps, -0.1), 1e-14);
  }
}

TEST(Schedule, RejectsBadInput) {
  const auto cov = build_covariance({});
  EXPECT_THROW(schedule({0, 0}, {}, cov, {}), ValidationError);
  EXPECT_THROW(schedule({0, 0}, {0.1, 0.2}, cov, {}), ValidationError);
  EXPECT_THROW(schedule({0, 0}, {1.5}, cov, {}), ValidationError);
  ScheduleBase low_nu;
  low_nu.nu_target = 0.1;  // below mu^2 C(0)
  EXPECT_THROW(schedule({0, 0}, {0.5}, cov, low_nu), ValidationError);
}

// ---------------------------------------------------------------- config

TEST(Config, ParsesAllSections) {
  const auto c = parse_config_text(
      "[mollifier]\nshape = truncated-cosine\nmass = 2\n"
      "[grid]\nL = 6\nnx = 128\n"
      "[noise]\nseed = 99\n"
      "[schedule]\nalpha = -0.5\nbeta = 1\neps = 0.2, 0.1\nkappa = 1\n"
      "[experiment]\nkind = critical-line\ntimes = 0.25,0.5\nreplicas = 10\ntilt = exponential\n"
      "alpha_range = -1:0\n");
  EXPECT_EQ(c.mollifier.shape, MollifierShape::TruncatedCosine);
  EXPECT_EQ(c.mollifier.mass, 2.0);
  EXPECT_EQ(c.L, 6.0);
  EXPECT_EQ(c.nx, 128);
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.eps_list, (std::vector<double>{0.2, 0.1}));
  EXPECT_EQ(c.kind, ExperimentKind::CriticalLine);
  EXPECT_EQ(c.times, (std::vector<double>{0.25, 0.5}));
  EXPECT_EQ(c.scheme.tilt_form, TiltForm::Exponential);
  EXPECT_EQ(c.alpha_range.lo, -1.0);
  EXPECT_EQ(c.alpha_range.hi, 0.0);
}

TEST(Config, ErrorsNameTheOffendingPath) {
  auto message = [](const std::string& text) {
    try {
      parse_config_text(text);
    } catch (const ValidationError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[grid]\nnx = 7\n").find("grid.nx"), std::string::npos);
  EXPECT_NE(message("[grid]\nnx = abc\n").find("grid.nx"), std::string::npos);
  EXPECT_NE(message("[bogus]\nx = 1\n").find("[bogus]"), std::string::npos);
  EXPECT_NE(message("[grid]\nwidth = 1\n").find("grid.width"), std::string::npos);
  EXPECT_NE(message("[schedule]\neps = 0.1, 0.2\n").find("schedule.eps"), std::string::npos);
  EXPECT_NE(message("[experiment]\nkind = nope\n").find("experiment.kind"), std::string::npos);
  // every failure is reported, not only the first
  const auto both = message("[grid]\nnx = 7\nL = -1\n");
  EXPECT_NE(both.find("grid.nx"), std::string::npos);
  EXPECT_NE(both.find("grid.L"), std::string::npos);
}

TEST(Config, HashIsStableAndIgnoresFormatting) {
  const auto a = parse_config_text("[schedule]\neps = 0.2,0.1\n[experiment]\nworkers = 1\n");
  const auto b = parse_config_text("[experiment]\nworkers = 4\n[schedule]\neps = 0.20, 0.10\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  auto c = a;
  c.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(canonical(parse_config_text(canonical(a))), canonical(a));
}

// ---------------------------------------------------------------- experiments

TEST(Experiment, MeanKernelRecordsCarryStandardErrors) {
  const auto res = run_experiment(small_mean_kernel());
  EXPECT_EQ(res.exit_code(), 0);
  ASSERT_EQ(res.records.size(), 2u);
  for (const auto& r : res.records) {
    const auto& sup = r.get("sup_error");
    EXPECT_GT(sup.se, 0.0);
    EXPECT_LT(sup.value, 5.0 * sup.se + 0.01);
    // the tilt makes the mass a mean-one martingale
    const auto& m = r.get("mass");
    EXPECT_NEAR(m.value, 1.0, 4.0 * m.se);
  }
}

TEST(Experiment, RerunIsByteIdentical) {
  auto cfg = small_mean_kernel();
  const auto d1 = scratch_dir("a"), d2 = scratch_dir("b");
  run_experiment(cfg, d1);
  cfg.workers = 3;  // worker count must not change any output
  run_experiment(cfg, d2);
  EXPECT_EQ(slurp(d1 / "records.csv"), slurp(d2 / "records.csv"));
  const auto manifest = nlohmann::json::parse(slurp(d1 / "manifest.json"));
  EXPECT_EQ(manifest["config_hash"], config_hash(cfg));
  EXPECT_EQ(manifest["exit_code"], 0);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Experiment, WeakDisorderApproachesTheFreeKernel) {
  LabConfig c;
  c.kind = ExperimentKind::WeakDisorder;
  c.alpha = -1.0;
  c.beta = 0.25;
  c.eps_list = {0.2, 0.1};
  c.lambda = 1.0;
  c.mu = 1.0;
  c.L = 4.0;
  const auto res = run_experiment(c);
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_LT(res.records[1].get("rel_err").value, res.records[0].get("rel_err").value);
}

TEST(Experiment, CriticalLineTableHasOracleColumns) {
  LabConfig c;
  c.kind = ExperimentKind::CriticalLine;
  c.alpha = -0.5;
  c.beta = 1.0;
  c.eps_list = {0.2};
  c.kappa_target = 1.0;
  c.nu_target = 1.0;
  c.L = 6.0;
  const auto d = scratch_dir("crit");
  const auto res = run_experiment(c, d);
  ASSERT_EQ(res.records.size(), 1u);
  const auto& r = res.records[0];
  EXPECT_NEAR(r.get("kappa_eps").value, 1.0, 1e-12);
  EXPECT_NEAR(r.get("abs_err").value, std::abs(r.get("q0").value - r.get("she_oracle").value), 1e-15);
  std::ifstream is(d / "critical_line.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "eps,t,q0,she_oracle,abs_err");
  std::filesystem::remove_all(d);
}

TEST(Experiment, PhaseSweepCoversTheGrid) {
  LabConfig c;
  c.kind = ExperimentKind::PhaseSweep;
  c.grid_points = 5;
  c.eps_list = {0.2, 0.1};
  const auto res = run_experiment(c);
  EXPECT_EQ(res.records.size(), 25u);
}

TEST(Experiment, PartialFailureKeepsCompletedCells) {
  ExperimentResult res;
  res.kind = "mean-kernel";
  lab::detail::run_cell(res, "ok", [](std::vector<ExperimentRecord>& r) { r.push_back({0.5, 0.1, {{"x", 1, 0}}}); });
  lab::detail::run_cell(res, "bad", [](std::vector<ExperimentRecord>&) { throw BlowUpError("overflow", 7); });
  EXPECT_EQ(res.records.size(), 1u);
  ASSERT_EQ(res.failures.size(), 1u);
  EXPECT_NE(res.failures[0].find("bad"), std::string::npos);
  EXPECT_EQ(res.exit_code(), 4);
  ExperimentResult none;
  lab::detail::run_cell(none, "bad", [](std::vector<ExperimentRecord>&) { throw BlowUpError("overflow", 7); });
  EXPECT_EQ(none.exit_code(), 3);
}

// ---------------------------------------------------------------- strong disorder

TEST(StrongDisorder, ZeroCouplingKeepsUnitSquareRootMass) {
  const auto cov = build_covariance({});
  const auto p = make_scale_params(cov, 0.25, 0.5, 0.5, 0.0);
  SpdeEnsembleOptions o;
  o.replicas = 8;
  o.workers = 1;
  const auto pts = strong_disorder_diagnostic(cov, p, {0.0}, Grid{3.0, 96}, 0.0, {0.1, 0.2}, o);
  ASSERT_EQ(pts.size(), 1u);
  for (const auto& s : pts[0].sqrt_mass) EXPECT_NEAR(s.mean, 1.0, 1e-10);
  EXPECT_NEAR(pts[0].fitted_rate, 0.0, 1e-9);
  EXPECT_EQ(pts[0].predicted_rate, 0.0);
}

TEST(StrongDisorder, JensenBoundAndDecay) {
  const auto cov = build_covariance({});
  const auto p = make_scale_params(cov, 0.25, 0.5, 0.5, 0.0);
  SpdeEnsembleOptions o;
  o.replicas = 16;
  o.workers = 1;
  o.scheme.tilt_form = TiltForm::Exponential;
  const auto pts = strong_disorder_diagnostic(cov, p, {1.0, 3.0}, Grid{3.0, 96}, 0.0, {0.1, 0.2}, o);
  for (const auto& pt : pts)
    for (const auto& s : pt.sqrt_mass) EXPECT_LE(s.mean, 1.0 + 1e-12);
  EXPECT_LT(pts[1].sqrt_mass.back().mean, pts[0].sqrt_mass.back().mean);
}

TEST(EscapeRadius, GaussianLimit) {
  const auto cov = build_covariance({});
  const auto p = make_scale_params(cov, 1e-8, 1.0, 1.0, 0.0);
  const double sd = std::sqrt(0.7 * p.nu);
  const double expect = sd * boost::math::quantile(boost::math::normal(), 0.975);
  EXPECT_NEAR(escape_radius(cov, p, 0.7), expect, 1e-6 * expect);
}

TEST(EscapeRadius, TailProbabilityIsTheLevel) {
  MollifierSpec m;
  m.shape = MollifierShape::TruncatedCosine;
  const auto cov = build_covariance(m);
  const auto p = make_scale_params(cov, 0.6, 1.0, 0.3, 0.0);
  const double s = 0.2, a = escape_radius(cov, p, s);
  // P(|sqrt(s) Z + eps W| > a) by direct quadrature over W with the closed-form profile
  const double sd = std::sqrt(s * p.nu);
  boost::math::quadrature::tanh_sinh<double> ts;
  const double norm = ts.integrate([](double w) { return std::pow(std::cos(std::numbers::pi * w / 2), 4); }, -1.0, 1.0);
  const double tail = ts.integrate(
      [&](double w) {
        const double dens = std::pow(std::cos(std::numbers::pi * w / 2), 4) / norm;
        const double x = p.eps * w;
        return dens * (0.5 * std::erfc((a - x) / (sd * std::sqrt(2.0))) + 0.5 * std::erfc((a + x) / (sd * std::sqrt(2.0))));
      },
      -1.0, 1.0);
  EXPECT_NEAR(tail, 0.05, 1e-6);
}
