#include <CLI11.hpp>
#include <bit>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "turbolab/lab/experiment.hpp"

using namespace turbolab;
using namespace turbolab::lab;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

/// Mollified noise increment of replica 0 at time index k: nx doubles, little-endian.
void dump_noise(const LabConfig& cfg, std::int64_t k, const std::filesystem::path& path) {
  const auto cov = build_covariance(cfg.mollifier);
  const auto sched = schedule({cfg.alpha, cfg.beta}, cfg.eps_list, cov, schedule_base(cfg));
  const auto& p = sched.front().params;
  const Grid grid{cfg.L, cfg.nx};
  NoiseGrid ng{grid, resolve_dt(cfg.dt, grid.dx(), cov, p, cfg.scheme), derive_seed(cfg.seed, 0)};
  FieldMollifier mol(grid, cov, p);
  std::vector<double> xi(grid.size()), dW(grid.size());
  sample_white_increments(ng, k, xi);
  mol.apply(xi, dW);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot write " + path.string());
  for (double v : dW) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(bytes, 8);
  }
}

std::vector<double> parse_eps_list(const std::string& s) { return lab::detail::parse_list("--eps-list", s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"turbolab lab: transport SPDE, two-point motion and second-moment experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path, out_dir = "out", eps_list;
  std::int64_t replicas = 0;
  std::uint64_t seed = 0;
  std::int64_t dump_k = -1;
  unsigned workers = 0;
  double alpha = 0.0, beta = 0.0;
  std::string alpha_range = "-1:1", beta_range = "0:1.5";
  int grid_points = 7;

  auto common = [&](CLI::App* sub, bool need_config) {
    auto* opt = sub->add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
    if (need_config) opt->required();
    sub->add_option("--replicas", replicas, "override experiment.replicas")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "override noise.seed");
    sub->add_option("--workers", workers, "worker threads (0 = all cores)");
  };

  auto* run = app.add_subcommand("run", "run the experiment described by the config");
  common(run, true);
  run->add_option("--out", out_dir, "output directory");

  auto* sweep = app.add_subcommand("sweep", "classify an (alpha, beta) grid and tabulate kappa_eps");
  common(sweep, false);
  sweep->add_option("--alpha-range", alpha_range, "lo:hi");
  sweep->add_option("--beta-range", beta_range, "lo:hi");
  sweep->add_option("--grid-points", grid_points, "points per axis")->check(CLI::Range(2, 1000));
  sweep->add_option("--out", out_dir, "output directory");

  auto* classify = app.add_subcommand("classify", "print the regime of one (alpha, beta) point");
  classify->add_option("--alpha", alpha)->required();
  classify->add_option("--beta", beta)->required();

  auto* spde = app.add_subcommand("spde", "ensemble of transport SPDE solutions");
  common(spde, true);
  spde->add_option("--out", out_dir, "output directory");
  spde->add_option("--dump-noise", dump_k, "write the noise increment of replica 0 at time index k")
      ->check(CLI::NonNegativeNumber);

  auto* twopoint = app.add_subcommand("twopoint", "Feynman-Kac moments of the two-point difference");
  common(twopoint, true);
  twopoint->add_option("--out", out_dir, "output directory");

  auto* qpde = app.add_subcommand("qpde", "second-moment PDE along an eps list");
  common(qpde, true);
  qpde->add_option("--eps-list", eps_list, "comma-separated, strictly decreasing");
  qpde->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (classify->parsed()) {
      const RegimePoint pt{alpha, beta};
      const Regime regime = classify_regime(pt);
      std::cout << "regime: " << to_string(regime) << "\n"
                << "side: " << to_string(pt.side()) << "\n"
                << "critical_beta: " << num(critical_beta(alpha)) << "\n";
      return 0;
    }

    LabConfig cfg = config_path.empty() ? LabConfig{} : load_config(config_path);
    if (replicas > 0) cfg.replicas = replicas;
    if (seed > 0) cfg.seed = seed;
    cfg.workers = workers;
    const std::filesystem::path out(out_dir);

    if (run->parsed()) {
      const auto res = run_experiment(cfg, out);
      std::cout << "kind " << res.kind << ", regime " << res.regime << ", hash " << res.config_hash << ", "
                << res.records.size() << " records in " << out.string() << "\n";
      for (const auto& f : res.failures) std::cerr << "failed: " << f << "\n";
      return res.exit_code();
    }
    if (sweep->parsed()) {
      cfg.alpha_range = lab::detail::parse_range("--alpha-range", alpha_range);
      cfg.beta_range = lab::detail::parse_range("--beta-range", beta_range);
      cfg.grid_points = grid_points;
      validate(cfg);
      const auto pts = phase_sweep(cfg, build_covariance(cfg.mollifier));
      std::filesystem::create_directories(out);
      write_sweep(out / "phase_sweep.csv", pts, cfg.eps_list);
      for (const auto& sp : pts)
        std::cout << num(sp.alpha) << " " << num(sp.beta) << " " << to_string(sp.regime) << "\n";
      return 0;
    }
    if (spde->parsed()) {
      validate(cfg);
      run_spde_command(cfg, out);
      if (dump_k >= 0) dump_noise(cfg, dump_k, out / ("noise_k" + std::to_string(dump_k) + ".f64"));
      return 0;
    }
    if (twopoint->parsed()) {
      validate(cfg);
      run_twopoint_command(cfg, out);
      return 0;
    }
    if (qpde->parsed()) {
      if (!eps_list.empty()) cfg.eps_list = parse_eps_list(eps_list);
      validate(cfg);
      run_qpde_command(cfg, out);
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return 0;
}
