#pragma once

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <boost/version.hpp>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fftw3.h>
#include <json.hpp>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "turbolab/ensemble.hpp"
#include "turbolab/lab/config.hpp"
#include "turbolab/lab/csv.hpp"
#include "turbolab/lab/regime.hpp"
#include "turbolab/particles.hpp"
#include "turbolab/qpde.hpp"
#include "turbolab/spde.hpp"

namespace turbolab::lab {

inline constexpr const char* kVersion = "1.0.0";

struct Observable {
  std::string name;
  double value = 0.0;
  double se = 0.0;  // Monte Carlo standard error, or the solver error estimate for deterministic values
};

struct ExperimentRecord {
  double eps = 0.0;
  double t = 0.0;
  std::vector<Observable> observables;

  const Observable& get(const std::string& name) const {
    for (const auto& o : observables)
      if (o.name == name) return o;
    throw ValidationError("record has no observable " + name);
  }
};

struct ExperimentResult {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string kind;
  std::string regime;
  std::vector<ExperimentRecord> records;
  std::vector<std::string> failures;
  std::vector<std::string> files;
  std::int64_t excluded_replicas = 0;

  /// 0 success, 3 every cell failed numerically, 4 some cells failed.
  int exit_code() const noexcept {
    if (failures.empty()) return 0;
    return records.empty() ? 3 : 4;
  }
};

// ---------------------------------------------------------------- SPDE ensemble

struct SpdeEnsembleOptions {
  std::int64_t replicas = 100;
  unsigned workers = 1;
  std::uint64_t seed = 1;
  SpdeScheme scheme;
  double lambda_term = 0.0;
  bool keep_samples = false;  // keep every replica field (for quantiles)
};

struct SpdeTimeStats {
  double t = 0.0;  // actual time reached on the step grid
  FieldStats field;
  RunningStats mass, l2, sqrt_mass, negative_mass;
  std::vector<std::vector<double>> samples;
};

struct SpdeEnsemble {
  std::vector<SpdeTimeStats> times;
  std::int64_t blowups = 0;
  double dt = 0.0;
};

/// Largest admissible step, or the configured one after checking it.
inline double resolve_dt(double configured, double dx, const CovarianceSpec& cov, const ScaleParams& p,
                         const SpdeScheme& scheme) {
  const double bound = transport_dt(dx, cov, p, scheme);
  if (configured <= 0.0) return bound;
  if (configured > bound * (1.0 + 1e-12))
    throw CflError("grid.dt = " + std::to_string(configured) + " exceeds the admissible " + std::to_string(bound));
  return configured;
}

/// Replica r is driven by derive_seed(seed, r); replicas ending in a BlowUpError
/// are excluded from every time and counted. Blocks of 16 replicas are merged in
/// order, so the result does not depend on the worker count.
inline SpdeEnsemble spde_ensemble(const CovarianceSpec& cov, const ScaleParams& p, const Grid& grid, double dt,
                                  const std::vector<double>& times, const SpdeEnsembleOptions& opt) {
  struct Block {
    std::vector<SpdeTimeStats> times;
    std::int64_t blowups = 0;
  };
  auto block = [&](std::int64_t first, std::int64_t last) {
    Block b;
    b.times.resize(times.size());
    for (auto& ts : b.times) ts.field = FieldStats(grid.size());
    std::vector<std::vector<double>> snap(times.size());
    std::vector<double> tt(times.size());
    for (std::int64_t r = first; r < last; ++r) {
      NoiseGrid ng{grid, dt, derive_seed(opt.seed, static_cast<std::uint64_t>(r))};
      try {
        TransportRun run(ng, cov, p, opt.lambda_term, opt.scheme);
        for (std::size_t i = 0; i < times.size(); ++i) {
          run.advance_to(times[i]);
          snap[i] = run.state().values;
          tt[i] = run.state().t;
        }
      } catch (const BlowUpError&) {
        ++b.blowups;
        continue;
      }
      for (std::size_t i = 0; i < times.size(); ++i) {
        GridField f(grid, tt[i]);
        f.values = snap[i];
        auto& ts = b.times[i];
        ts.t = tt[i];
        ts.field.push(f.values);
        const double m = f.mass();
        ts.mass.push(m);
        ts.l2.push(f.l2sq());
        ts.sqrt_mass.push(std::sqrt(std::max(m, 0.0)));
        ts.negative_mass.push(negative_mass(f));
        if (opt.keep_samples) ts.samples.push_back(std::move(snap[i]));
      }
    }
    return b;
  };
  auto merge = [](Block& acc, const Block& b) {
    if (acc.times.empty()) {
      acc = b;
      return;
    }
    acc.blowups += b.blowups;
    for (std::size_t i = 0; i < acc.times.size(); ++i) {
      auto& a = acc.times[i];
      const auto& o = b.times[i];
      if (o.mass.n > 0) a.t = o.t;
      a.field.merge(o.field);
      a.mass.merge(o.mass);
      a.l2.merge(o.l2);
      a.sqrt_mass.merge(o.sqrt_mass);
      a.negative_mass.merge(o.negative_mass);
      a.samples.insert(a.samples.end(), o.samples.begin(), o.samples.end());
    }
  };
  const Block all = run_blocks<Block>(opt.replicas, 16, opt.workers, block, merge);
  SpdeEnsemble out;
  out.times = all.times;
  out.blowups = all.blowups;
  out.dt = dt;
  return out;
}

/// Sup-norm distance of the ensemble mean to the periodised heat kernel, and the
/// pooled standard error (the largest pointwise SE).
struct MeanKernelError {
  double sup_error = 0.0;
  double pooled_se = 0.0;
  double max_z = 0.0;  // largest pointwise |mean - p_t| / se
};

inline MeanKernelError mean_kernel_error(const SpdeTimeStats& ts, const Grid& grid, double nu) {
  const auto exact = heat_field(grid, nu, ts.t);
  MeanKernelError e;
  for (std::size_t j = 0; j < exact.values.size(); ++j) {
    const double d = std::abs(ts.field.mean[j] - exact.values[j]);
    const double se = ts.field.se(j);
    e.sup_error = std::max(e.sup_error, d);
    e.pooled_se = std::max(e.pooled_se, se);
    if (se > 0.0) e.max_z = std::max(e.max_z, d / se);
  }
  return e;
}

// ---------------------------------------------------------------- strong disorder

/// Smallest a with P(|sqrt(s) Z + eps W| > a) <= level, Z ~ N(0, nu) and W with the
/// unit-mass mollifier density.
inline double escape_radius(const CovarianceSpec& cov, const ScaleParams& p, double s, double level = 0.05) {
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("escape_radius: level must lie in (0, 1)");
  const double sd = std::sqrt(s * p.nu);
  const double m = cov.rho.mass;
  const std::size_t n = cov.rho_table.size() - 1;
  auto tail = [&](double a) {
    std::vector<double> f(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
      const double w = -1.0 + cov.h * static_cast<double>(i);
      const double shift = p.eps * w;
      double pr = 0.5 * std::erfc((a - shift) / (sd * std::numbers::sqrt2)) +
                  0.5 * std::erfc((a + shift) / (sd * std::numbers::sqrt2));
      f[i] = pr * (m > 0.0 ? cov.rho_table[i] / m : 0.0);
    }
    return m > 0.0 ? quad::simpson(f, cov.h) : std::erfc(a / (sd * std::numbers::sqrt2));
  };
  double hi = sd + p.eps;
  while (tail(hi) > level) hi *= 2.0;
  boost::math::tools::eps_tolerance<double> tol(40);
  std::uintmax_t iters = 200;
  const auto [lo_r, hi_r] = boost::math::tools::bisect([&](double a) { return tail(a) - level; }, 0.0, hi, tol, iters);
  return 0.5 * (lo_r + hi_r);
}

struct StrongDisorderPoint {
  double lambda_mu_sqrt_eps = 0.0;
  ScaleParams params;
  std::vector<double> t;
  std::vector<RunningStats> sqrt_mass, mass;
  std::int64_t blowups = 0;
  double escape_radius = 0.0;
  double predicted_rate = 0.0;  // kappa_eps^2 / (8 a)
  double fitted_rate = 0.0;     // least squares on log E[v^(1/2)] with E[v_0^(1/2)] = 1
  double fitted_rate_se = 0.0;
};

/// E[v_t^(1/2)] for the tilted SPDE along lambda mu sqrt(eps) = targets, all points
/// driven by the same replica seeds.
inline std::vector<StrongDisorderPoint> strong_disorder_diagnostic(const CovarianceSpec& cov, const ScaleParams& base,
                                                                   const std::vector<double>& targets,
                                                                   const Grid& grid, double configured_dt,
                                                                   const std::vector<double>& times,
                                                                   const SpdeEnsembleOptions& opt) {
  if (!(base.mu > 0.0)) throw ValidationError("strong_disorder_diagnostic: mu must be positive");
  std::vector<StrongDisorderPoint> out;
  for (double target : targets) {
    StrongDisorderPoint pt;
    pt.lambda_mu_sqrt_eps = target;
    const double lambda = target / (base.mu * std::sqrt(base.eps));
    pt.params = make_scale_params(cov, base.eps, base.mu, base.sigma, lambda);
    SpdeEnsembleOptions o = opt;
    o.lambda_term = lambda;
    const double dt = resolve_dt(configured_dt, grid.dx(), cov, pt.params, o.scheme);
    const auto ens = spde_ensemble(cov, pt.params, grid, dt, times, o);
    pt.blowups = ens.blowups;
    for (const auto& ts : ens.times) {
      pt.t.push_back(ts.t);
      pt.sqrt_mass.push_back(ts.sqrt_mass);
      pt.mass.push_back(ts.mass);
    }
    pt.escape_radius = escape_radius(cov, pt.params, times.back());
    pt.predicted_rate = pt.params.kappa_eps * pt.params.kappa_eps / (8.0 * pt.escape_radius);
    // slope of log E[v^(1/2)] through (0, 0): rate = -sum t_i y_i / sum t_i^2
    double stt = 0.0, sty = 0.0, var = 0.0;
    for (std::size_t i = 0; i < pt.t.size(); ++i) stt += pt.t[i] * pt.t[i];
    for (std::size_t i = 0; i < pt.t.size(); ++i) {
      const double m = std::max(pt.sqrt_mass[i].mean, 1e-300);
      sty += pt.t[i] * std::log(m);
      const double w = pt.t[i] / stt;
      var += w * w * std::pow(pt.sqrt_mass[i].se() / m, 2);
    }
    pt.fitted_rate = -sty / stt;
    pt.fitted_rate_se = std::sqrt(var);
    out.push_back(std::move(pt));
  }
  return out;
}

// ---------------------------------------------------------------- helpers

inline Grid q_grid(const LabConfig& cfg, double eps) {
  // dx <= eps / 8 with an even node count
  int nx = std::max(cfg.nx, static_cast<int>(std::ceil(2.0 * cfg.L / (eps / 8.0) - 1e-9)));
  nx += nx % 2;
  return Grid{cfg.L, nx};
}

inline unsigned resolve_workers(unsigned w) { return w == 0 ? default_workers() : w; }

inline ScheduleBase schedule_base(const LabConfig& cfg) {
  ScheduleBase b;
  b.mu = cfg.mu;
  b.sigma = cfg.sigma;
  b.lambda = cfg.lambda;
  b.kappa_target = cfg.kappa_target;
  b.nu_target = cfg.nu_target;
  return b;
}

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// records.csv: one row per (eps, t, observable).
inline void write_records(const std::filesystem::path& path, const std::string& kind,
                          const std::vector<ExperimentRecord>& records) {
  CsvWriter w(path, {"kind", "eps", "t", "observable", "value", "se"});
  for (const auto& r : records)
    for (const auto& o : r.observables) w.row({kind, num(r.eps), num(r.t), o.name, num(o.value), num(o.se)});
}

inline void write_manifest(const std::filesystem::path& path, const LabConfig& cfg, const ExperimentResult& res,
                           const std::string& started) {
  nlohmann::ordered_json j;
  j["tool"] = "turbolab lab";
  j["version"] = kVersion;
  j["config_hash"] = res.config_hash;
  j["seed"] = res.seed;
  j["kind"] = res.kind;
  j["regime"] = res.regime;
  j["alpha"] = cfg.alpha;
  j["beta"] = cfg.beta;
  j["replicas"] = cfg.replicas;
  j["files"] = res.files;
  j["failures"] = res.failures;
  j["excluded_replicas"] = res.excluded_replicas;
  j["exit_code"] = res.exit_code();
  j["started_utc"] = started;
  j["finished_utc"] = utc_now();
  j["libraries"]["fftw"] = std::string(fftw_version);
  j["libraries"]["boost"] = std::string(BOOST_LIB_VERSION);
  j["libraries"]["compiler"] = std::string(__VERSION__);
  j["config"] = canonical(cfg);
  std::ofstream os(path, std::ios::binary);
  os << j.dump(2) << '\n';
  if (!os) throw ValidationError("cannot write " + path.string());
}

// ---------------------------------------------------------------- experiments

namespace detail {

using Cell = std::function<void(std::vector<ExperimentRecord>&)>;

/// Runs one cell; numerical failures are recorded and the run continues.
inline void run_cell(ExperimentResult& res, const std::string& label, const Cell& cell) {
  try {
    cell(res.records);
  } catch (const NumericalError& e) {
    res.failures.push_back(label + ": " + e.what());
  }
}

inline void mean_kernel(const LabConfig& cfg, const CovarianceSpec& cov, const std::vector<ScheduleEntry>& sched,
                        const std::filesystem::path& out, ExperimentResult& res) {
  const Grid grid{cfg.L, cfg.nx};
  for (const auto& e : sched) {
    run_cell(res, "eps=" + num(e.params.eps), [&](std::vector<ExperimentRecord>& recs) {
      SpdeEnsembleOptions o{cfg.replicas, resolve_workers(cfg.workers), cfg.seed, cfg.scheme, e.params.lambda};
      const double dt = resolve_dt(cfg.dt, grid.dx(), cov, e.params, cfg.scheme);
      const auto ens = spde_ensemble(cov, e.params, grid, dt, cfg.times, o);
      res.excluded_replicas += ens.blowups;
      for (const auto& ts : ens.times) {
        const auto err = mean_kernel_error(ts, grid, e.params.nu);
        recs.push_back({e.params.eps, ts.t,
                        {{"sup_error", err.sup_error, err.pooled_se},
                         {"max_z", err.max_z, 0.0},
                         {"mass", ts.mass.mean, ts.mass.se()},
                         {"l2", ts.l2.mean, ts.l2.se()},
                         {"negative_mass", ts.negative_mass.mean, ts.negative_mass.se()},
                         {"excluded_replicas", static_cast<double>(ens.blowups), 0.0}}});
      }
    });
  }
  (void)out;
}

inline void second_moment(const LabConfig& cfg, const CovarianceSpec& cov, const std::vector<ScheduleEntry>& sched,
                          const std::filesystem::path& out, ExperimentResult& res) {
  const Grid grid{cfg.L, cfg.nx};
  std::vector<std::vector<std::string>> table;
  for (const auto& e : sched) {
    run_cell(res, "eps=" + num(e.params.eps), [&](std::vector<ExperimentRecord>& recs) {
      const auto& p = e.params;
      SpdeEnsembleOptions o{cfg.replicas, resolve_workers(cfg.workers), cfg.seed, cfg.scheme, p.lambda};
      const double dt = resolve_dt(cfg.dt, grid.dx(), cov, p, cfg.scheme);
      const auto ens = spde_ensemble(cov, p, grid, dt, cfg.times, o);
      res.excluded_replicas += ens.blowups;
      for (const auto& ts : ens.times) {
        TwoPointMomentOptions to;
        to.replicas = cfg.twopoint_replicas;
        to.seed = derive_seed(cfg.seed, 0x2B0147ull);
        to.workers = resolve_workers(cfg.workers);
        const auto mc = two_point_second_moment(cov, p, ts.t, to);
        const auto q = solve_q_lambda(cov, p, ts.t, q_grid(cfg, p.eps));
        const double a = ts.l2.mean, sa = ts.l2.se(), b = mc.q0.mean, sb = mc.q0.se, c = q.q0;
        recs.push_back({p.eps, ts.t,
                        {{"spde_l2", a, sa},
                         {"twopoint_q0", b, sb},
                         {"pde_q0", c, 0.0},
                         {"twopoint_mass", mc.mass.mean, mc.mass.se},
                         {"pde_mass", q.mass, 0.0},
                         {"diff_spde_twopoint", a - b, std::hypot(sa, sb)},
                         {"diff_spde_pde", a - c, sa},
                         {"diff_twopoint_pde", b - c, sb},
                         {"excluded_replicas", static_cast<double>(ens.blowups), 0.0}}});
        table.push_back({num(p.eps), num(ts.t), num(a), num(sa), num(b), num(sb), num(c)});
      }
    });
  }
  if (!out.empty()) {
    CsvWriter w(out / "second_moment.csv", {"eps", "t", "spde_l2", "spde_se", "twopoint_q0", "twopoint_se", "pde_q0"});
    for (const auto& r : table) w.row(r);
    res.files.push_back("second_moment.csv");
  }
}

inline void q_table(const LabConfig& cfg, const CovarianceSpec& cov, const std::vector<ScheduleEntry>& sched,
                    const std::filesystem::path& out, ExperimentResult& res, bool critical) {
  std::vector<std::vector<std::string>> table;
  for (const auto& e : sched) {
    run_cell(res, "eps=" + num(e.params.eps), [&](std::vector<ExperimentRecord>& recs) {
      const auto& p = e.params;
      QOptions qo;
      qo.output_times = cfg.times;
      const auto series = solve_q_lambda_series(cov, p, cfg.times.back(), q_grid(cfg, p.eps), qo);
      for (std::size_t i = 0; i < cfg.times.size(); ++i) {
        const auto& q = series.snapshots[i];
        const double t = cfg.times[i];
        if (critical) {
          const auto she = she_second_moment(p.kappa_eps, p.nu, t);
          recs.push_back({p.eps, t,
                          {{"q0", q.q0, 0.0},
                           {"she_oracle", she.value, she.error},
                           {"abs_err", std::abs(q.q0 - she.value), she.error},
                           {"kappa_eps", p.kappa_eps, 0.0},
                           {"hypothesis", e.hypothesis, 0.0}}});
          table.push_back({num(p.eps), num(t), num(q.q0), num(she.value), num(std::abs(q.q0 - she.value))});
        } else {
          const double p2t = heat_kernel(p.nu, 2.0 * t, 0.0);
          recs.push_back({p.eps, t,
                          {{"q0", q.q0, 0.0},
                           {"p2t0", p2t, 0.0},
                           {"abs_err", std::abs(q.q0 - p2t), 0.0},
                           {"rel_err", std::abs(q.q0 - p2t) / p2t, 0.0},
                           {"kappa_eps", p.kappa_eps, 0.0}}});
          table.push_back({num(p.eps), num(t), num(q.q0), num(p2t), num(std::abs(q.q0 - p2t))});
        }
      }
    });
  }
  if (!out.empty()) {
    const std::string name = critical ? "critical_line.csv" : "weak_disorder.csv";
    CsvWriter w(out / name, {"eps", "t", "q0", critical ? "she_oracle" : "p2t0", "abs_err"});
    for (const auto& r : table) w.row(r);
    res.files.push_back(name);
  }
}

inline void strong_disorder(const LabConfig& cfg, const CovarianceSpec& cov, const std::vector<ScheduleEntry>& sched,
                            const std::filesystem::path& out, ExperimentResult& res) {
  const Grid grid{cfg.L, cfg.nx};
  std::vector<std::vector<std::string>> table;
  const auto& base = sched.front().params;
  run_cell(res, "eps=" + num(base.eps), [&](std::vector<ExperimentRecord>& recs) {
    SpdeEnsembleOptions o{cfg.replicas, resolve_workers(cfg.workers), cfg.seed, cfg.scheme, 0.0};
    const auto pts = strong_disorder_diagnostic(cov, base, cfg.lambda_mu_sqrt_eps, grid, cfg.dt, cfg.times, o);
    for (const auto& pt : pts) {
      res.excluded_replicas += pt.blowups;
      for (std::size_t i = 0; i < pt.t.size(); ++i) {
        recs.push_back({base.eps, pt.t[i],
                        {{"lambda_mu_sqrt_eps", pt.lambda_mu_sqrt_eps, 0.0},
                         {"sqrt_mass", pt.sqrt_mass[i].mean, pt.sqrt_mass[i].se()},
                         {"mass", pt.mass[i].mean, pt.mass[i].se()}}});
        table.push_back({num(pt.lambda_mu_sqrt_eps), num(pt.t[i]), num(pt.sqrt_mass[i].mean),
                         num(pt.sqrt_mass[i].se()), num(pt.mass[i].mean), num(pt.mass[i].se())});
      }
      recs.push_back({base.eps, pt.t.back(),
                      {{"lambda_mu_sqrt_eps", pt.lambda_mu_sqrt_eps, 0.0},
                       {"fitted_rate", pt.fitted_rate, pt.fitted_rate_se},
                       {"predicted_rate", pt.predicted_rate, 0.0},
                       {"escape_radius", pt.escape_radius, 0.0},
                       {"excluded_replicas", static_cast<double>(pt.blowups), 0.0}}});
    }
  });
  if (!out.empty()) {
    CsvWriter w(out / "strong_disorder.csv",
                {"lambda_mu_sqrt_eps", "t", "sqrt_mass", "sqrt_mass_se", "mass", "mass_se"});
    for (const auto& r : table) w.row(r);
    res.files.push_back("strong_disorder.csv");
  }
}

inline std::vector<double> linspace(Range r, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) v[i] = r.lo + (r.hi - r.lo) * i / (n - 1);
  return v;
}

}  // namespace detail

struct SweepPoint {
  double alpha = 0.0, beta = 0.0;
  Regime regime = Regime::WeakDisorder;
  std::vector<double> kappa_eps;  // along the eps list; empty when the schedule is not realisable
};

/// Classification over an (alpha, beta) grid, with kappa_eps along the eps list.
/// The lambda prefactor is schedule.lambda, or 1 when that is 0.
inline std::vector<SweepPoint> phase_sweep(const LabConfig& cfg, const CovarianceSpec& cov) {
  std::vector<SweepPoint> out;
  ScheduleBase base = schedule_base(cfg);
  base.kappa_target = 0.0;
  if (base.lambda == 0.0) base.lambda = 1.0;
  for (double a : detail::linspace(cfg.alpha_range, cfg.grid_points))
    for (double b : detail::linspace(cfg.beta_range, cfg.grid_points)) {
      SweepPoint sp{a, b, classify_regime({a, b}), {}};
      try {
        for (const auto& e : schedule({a, b}, cfg.eps_list, cov, base)) sp.kappa_eps.push_back(e.params.kappa_eps);
      } catch (const ValidationError&) {
        sp.kappa_eps.clear();
      }
      out.push_back(std::move(sp));
    }
  return out;
}

inline void write_sweep(const std::filesystem::path& path, const std::vector<SweepPoint>& pts,
                        const std::vector<double>& eps_list) {
  std::vector<std::string> header{"alpha", "beta", "regime"};
  for (double e : eps_list) header.push_back("kappa_eps_" + num(e));
  CsvWriter w(path, header);
  for (const auto& sp : pts) {
    std::vector<std::string> row{num(sp.alpha), num(sp.beta), to_string(sp.regime)};
    for (std::size_t i = 0; i < eps_list.size(); ++i)
      row.push_back(sp.kappa_eps.empty() ? "nan" : num(sp.kappa_eps[i]));
    w.row(row);
  }
}

/// Dispatches on experiment.kind. With a non-empty `out`, writes records.csv,
/// the kind-specific table and manifest.json (completed records are written even
/// when some cells failed).
inline ExperimentResult run_experiment(const LabConfig& cfg, const std::filesystem::path& out = {}) {
  validate(cfg);
  const std::string started = utc_now();
  const auto cov = build_covariance(cfg.mollifier);
  ExperimentResult res;
  res.config_hash = config_hash(cfg);
  res.seed = cfg.seed;
  res.kind = to_string(cfg.kind);
  res.regime = to_string(classify_regime({cfg.alpha, cfg.beta}));
  if (!out.empty()) std::filesystem::create_directories(out);

  if (cfg.kind == ExperimentKind::PhaseSweep) {
    const auto pts = phase_sweep(cfg, cov);
    for (const auto& sp : pts) {
      ExperimentRecord r{cfg.eps_list.back(), 0.0, {}};
      r.observables.push_back({"alpha", sp.alpha, 0.0});
      r.observables.push_back({"beta", sp.beta, 0.0});
      r.observables.push_back({"regime_code", static_cast<double>(static_cast<int>(sp.regime)), 0.0});
      if (!sp.kappa_eps.empty()) r.observables.push_back({"kappa_eps", sp.kappa_eps.back(), 0.0});
      res.records.push_back(r);
    }
    if (!out.empty()) {
      write_sweep(out / "phase_sweep.csv", pts, cfg.eps_list);
      res.files.push_back("phase_sweep.csv");
    }
  } else {
    const auto sched = schedule({cfg.alpha, cfg.beta}, cfg.eps_list, cov, schedule_base(cfg));
    switch (cfg.kind) {
      case ExperimentKind::MeanKernel: detail::mean_kernel(cfg, cov, sched, out, res); break;
      case ExperimentKind::SecondMoment: detail::second_moment(cfg, cov, sched, out, res); break;
      case ExperimentKind::CriticalLine: detail::q_table(cfg, cov, sched, out, res, true); break;
      case ExperimentKind::WeakDisorder: detail::q_table(cfg, cov, sched, out, res, false); break;
      case ExperimentKind::StrongDisorder: detail::strong_disorder(cfg, cov, sched, out, res); break;
      case ExperimentKind::PhaseSweep: break;
    }
  }
  if (!out.empty()) {
    write_records(out / "records.csv", res.kind, res.records);
    res.files.insert(res.files.begin(), "records.csv");
    write_manifest(out / "manifest.json", cfg, res, started);
  }
  return res;
}

// ---------------------------------------------------------------- single-module commands

/// field_t<t>.csv (y, mean, variance, q05, q50, q95) and mass_series.csv for the
/// first eps of the schedule. Files are named by the requested time; the rows
/// hold the field at the nearest step.
inline void run_spde_command(const LabConfig& cfg, const std::filesystem::path& out) {
  const auto cov = build_covariance(cfg.mollifier);
  const auto sched = schedule({cfg.alpha, cfg.beta}, cfg.eps_list, cov, schedule_base(cfg));
  const auto& p = sched.front().params;
  const Grid grid{cfg.L, cfg.nx};
  const double dt = resolve_dt(cfg.dt, grid.dx(), cov, p, cfg.scheme);
  SpdeEnsembleOptions o{cfg.replicas, resolve_workers(cfg.workers), cfg.seed, cfg.scheme, p.lambda, true};
  const auto ens = spde_ensemble(cov, p, grid, dt, cfg.times, o);
  if (ens.blowups == cfg.replicas) throw BlowUpError("every replica blew up", 0);
  std::filesystem::create_directories(out);
  for (std::size_t i = 0; i < ens.times.size(); ++i) {
    const auto& ts = ens.times[i];
    CsvWriter w(out / ("field_t" + num(cfg.times[i]) + ".csv"), {"y", "mean", "variance", "q05", "q50", "q95"});
    std::vector<double> col(ts.samples.size());
    for (int j = 0; j < grid.nx; ++j) {
      for (std::size_t r = 0; r < ts.samples.size(); ++r) col[r] = ts.samples[r][j];
      std::sort(col.begin(), col.end());
      auto quant = [&](double q) {
        const double pos = q * static_cast<double>(col.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        const double w = pos - static_cast<double>(i);
        return i + 1 < col.size() ? (1 - w) * col[i] + w * col[i + 1] : col[i];
      };
      w.values(grid.x(j), ts.field.mean[j], ts.field.variance(j), quant(0.05), quant(0.5), quant(0.95));
    }
  }
  CsvWriter m(out / "mass_series.csv", {"t", "mean_mass", "var_mass"});
  for (const auto& ts : ens.times) m.values(ts.t, ts.mass.mean, ts.mass.variance());
}

/// moments.csv (t, E_weight, SE, E_weight_f, SE_f) with f a unit-mass Gaussian of
/// width eps at separation 0, and difference_hist.csv at the last time.
inline void run_twopoint_command(const LabConfig& cfg, const std::filesystem::path& out) {
  const auto cov = build_covariance(cfg.mollifier);
  const auto sched = schedule({cfg.alpha, cfg.beta}, cfg.eps_list, cov, schedule_base(cfg));
  const auto& p = sched.front().params;
  const double dt = difference_dt(p, cfg.times.back());
  const double w = p.eps;
  auto f = [w](double d) { return std::exp(-d * d / (2 * w * w)) / (w * std::sqrt(2 * std::numbers::pi)); };
  const Grid bins{cfg.L, cfg.nx};
  struct Block {
    std::vector<RunningStats> weight, weighted_f;
    std::vector<double> hist, whist;
  };
  const std::size_t nt = cfg.times.size();
  auto block = [&](std::int64_t first, std::int64_t last) {
    Block b{std::vector<RunningStats>(nt), std::vector<RunningStats>(nt), std::vector<double>(bins.size(), 0.0),
            std::vector<double>(bins.size(), 0.0)};
    for (std::int64_t r = first; r < last; ++r) {
      NormalStream rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)), 1);
      DifferenceState s;
      for (std::size_t i = 0; i < nt; ++i) {
        while (s.t < cfg.times[i] - 0.5 * dt) step_difference(s, cov, p, dt, rng);
        const double e = std::exp(s.A);
        b.weight[i].push(e);
        b.weighted_f[i].push(e * f(s.d));
      }
      auto j = static_cast<int>(std::floor((bins.wrap(s.d) + bins.L) / bins.dx() + 0.5));
      if (j >= bins.nx) j -= bins.nx;
      b.hist[j] += 1.0;
      b.whist[j] += std::exp(s.A);
    }
    return b;
  };
  auto merge = [](Block& a, const Block& b) {
    if (a.weight.empty()) {
      a = b;
      return;
    }
    for (std::size_t i = 0; i < a.weight.size(); ++i) {
      a.weight[i].merge(b.weight[i]);
      a.weighted_f[i].merge(b.weighted_f[i]);
    }
    for (std::size_t j = 0; j < a.hist.size(); ++j) a.hist[j] += b.hist[j], a.whist[j] += b.whist[j];
  };
  const auto all = run_blocks<Block>(cfg.replicas, 256, resolve_workers(cfg.workers), block, merge);
  std::filesystem::create_directories(out);
  CsvWriter m(out / "moments.csv", {"t", "E_weight", "SE", "E_weight_f", "SE_f"});
  for (std::size_t i = 0; i < nt; ++i)
    m.values(cfg.times[i], all.weight[i].mean, all.weight[i].se(), all.weighted_f[i].mean, all.weighted_f[i].se());
  CsvWriter h(out / "difference_hist.csv", {"y", "density", "weighted_density"});
  const double norm = static_cast<double>(cfg.replicas) * bins.dx();
  for (int j = 0; j < bins.nx; ++j) h.values(bins.x(j), all.hist[j] / norm, all.whist[j] / norm);
}

/// q_lambda.csv (t, eps, lambda, q0, mass, she_oracle, p2t0) along the eps list.
inline void run_qpde_command(const LabConfig& cfg, const std::filesystem::path& out) {
  const auto cov = build_covariance(cfg.mollifier);
  const auto sched = schedule({cfg.alpha, cfg.beta}, cfg.eps_list, cov, schedule_base(cfg));
  std::filesystem::create_directories(out);
  CsvWriter w(out / "q_lambda.csv", {"t", "eps", "lambda", "q0", "mass", "she_oracle", "p2t0"});
  for (const auto& e : sched) {
    const auto& p = e.params;
    QOptions qo;
    qo.output_times = cfg.times;
    const auto series = solve_q_lambda_series(cov, p, cfg.times.back(), q_grid(cfg, p.eps), qo);
    for (std::size_t i = 0; i < cfg.times.size(); ++i) {
      const double t = cfg.times[i];
      w.values(t, p.eps, p.lambda, series.snapshots[i].q0, series.snapshots[i].mass,
               she_second_moment(p.kappa_eps, p.nu, t).value, heat_kernel(p.nu, 2.0 * t, 0.0));
    }
  }
}

}  // namespace turbolab::lab
