#pragma once

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "turbolab/covariance.hpp"
#include "turbolab/errors.hpp"
#include "turbolab/spde.hpp"

namespace turbolab::lab {

enum class ExperimentKind { MeanKernel, SecondMoment, CriticalLine, WeakDisorder, StrongDisorder, PhaseSweep };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::MeanKernel: return "mean-kernel";
    case ExperimentKind::SecondMoment: return "second-moment";
    case ExperimentKind::CriticalLine: return "critical-line";
    case ExperimentKind::WeakDisorder: return "weak-disorder";
    case ExperimentKind::StrongDisorder: return "strong-disorder";
    case ExperimentKind::PhaseSweep: return "phase-sweep";
  }
  return "?";
}

inline ExperimentKind parse_kind(const std::string& s) {
  for (auto k : {ExperimentKind::MeanKernel, ExperimentKind::SecondMoment, ExperimentKind::CriticalLine,
                 ExperimentKind::WeakDisorder, ExperimentKind::StrongDisorder, ExperimentKind::PhaseSweep})
    if (to_string(k) == s) return k;
  throw ValidationError("experiment.kind: unknown kind '" + s + "'");
}

struct Range {
  double lo = 0.0, hi = 0.0;
};

/// Fully resolved lab configuration. Every field has a default, so an empty file
/// describes a small mean-kernel run.
struct LabConfig {
  MollifierSpec mollifier;

  double L = 4.0;
  int nx = 256;
  double dt = 0.0;  // 0 selects the largest admissible step

  std::uint64_t seed = 1;

  double alpha = 0.0, beta = 0.0;
  std::vector<double> eps_list{0.25};
  double mu = 1.0, sigma = 1.0, lambda = 0.0;
  double kappa_target = 0.0;  // > 0: lambda rescaled on critical lines so kappa_eps hits it
  double nu_target = 0.0;     // > 0: sigma chosen per eps so that nu(eps) = nu_target

  ExperimentKind kind = ExperimentKind::MeanKernel;
  std::vector<double> times{0.5};
  std::int64_t replicas = 100;
  unsigned workers = 0;  // 0 selects the hardware concurrency
  SpdeScheme scheme;
  std::vector<double> lambda_mu_sqrt_eps{3.0, 6.0, 12.0};
  Range alpha_range{-1.0, 1.0}, beta_range{0.0, 1.5};
  int grid_points = 7;
  std::int64_t twopoint_replicas = 200000;
};

namespace detail {
inline std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError(key + ": '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ValidationError(key + ": empty list");
  return out;
}

inline Range parse_range(const std::string& key, const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ValidationError(key + ": expected lo:hi");
  const auto lo = parse_list(key, text.substr(0, colon)), hi = parse_list(key, text.substr(colon + 1));
  if (lo.size() != 1 || hi.size() != 1 || !(lo[0] <= hi[0])) throw ValidationError(key + ": expected lo:hi with lo <= hi");
  return {lo[0], hi[0]};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}
}  // namespace detail

/// Collects every validation failure, each prefixed with its config path.
inline void validate(const LabConfig& c) {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  need(c.mollifier.mass >= 0.0, "mollifier.mass: must be non-negative");
  need(c.mollifier.samples >= 64, "mollifier.samples: must be >= 64");
  need(c.L > 0.0, "grid.L: must be positive");
  need(c.nx >= 8 && c.nx % 2 == 0, "grid.nx: must be even and >= 8");
  need(c.dt >= 0.0, "grid.dt: must be non-negative");
  need(c.beta >= 0.0, "schedule.beta: must be non-negative");
  need(!c.eps_list.empty(), "schedule.eps: empty");
  for (std::size_t i = 0; i < c.eps_list.size(); ++i) {
    need(c.eps_list[i] > 0.0 && c.eps_list[i] < 1.0, "schedule.eps: values must lie in (0, 1)");
    if (i) need(c.eps_list[i] < c.eps_list[i - 1], "schedule.eps: list must be strictly decreasing");
  }
  need(c.mu >= 0.0 && c.sigma >= 0.0, "schedule.mu, schedule.sigma: must be non-negative");
  need(c.mu > 0.0 || c.sigma > 0.0 || c.nu_target > 0.0, "schedule.mu, schedule.sigma: one must be positive");
  need(c.kappa_target >= 0.0, "schedule.kappa: must be non-negative");
  need(c.nu_target >= 0.0, "schedule.nu: must be non-negative");
  need(!c.times.empty(), "experiment.times: empty");
  for (std::size_t i = 0; i < c.times.size(); ++i) {
    need(c.times[i] > 0.0, "experiment.times: values must be positive");
    if (i) need(c.times[i] > c.times[i - 1], "experiment.times: list must be strictly increasing");
  }
  need(c.replicas >= 1, "experiment.replicas: must be >= 1");
  need(c.twopoint_replicas >= 2, "experiment.twopoint_replicas: must be >= 2");
  need(c.scheme.stability_factor > 0.0 && c.scheme.stability_factor <= 0.5,
       "experiment.stability_factor: must lie in (0, 0.5]");
  for (double v : c.lambda_mu_sqrt_eps) need(v >= 0.0, "experiment.lambda_mu_sqrt_eps: values must be non-negative");
  need(c.grid_points >= 2, "experiment.grid_points: must be >= 2");
  if (!errs.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errs) msg += "\n  " + e;
    throw ValidationError(msg);
  }
}

inline LabConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError("config: " + std::string(e.what()));
  }
  static const std::vector<std::pair<std::string, std::vector<std::string>>> known = {
      {"mollifier", {"shape", "mass", "samples"}},
      {"grid", {"L", "nx", "dt"}},
      {"noise", {"seed"}},
      {"schedule", {"alpha", "beta", "eps", "mu", "sigma", "lambda", "kappa", "nu"}},
      {"experiment",
       {"kind", "times", "replicas", "workers", "flux", "tilt", "stability_factor", "lambda_mu_sqrt_eps",
        "alpha_range", "beta_range", "grid_points", "twopoint_replicas"}}};
  for (const auto& [section, body] : tree) {
    auto it = std::find_if(known.begin(), known.end(), [&](const auto& k) { return k.first == section; });
    if (it == known.end()) throw ValidationError("config: unknown section [" + section + "]");
    for (const auto& [key, _] : body)
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ValidationError("config: unknown key " + section + "." + key);
  }

  LabConfig c;
  auto get = [&](const std::string& path, auto fallback) {
    using T = decltype(fallback);
    const auto node = tree.get_optional<std::string>(path);
    if (!node) return fallback;
    try {
      std::size_t used = 0;
      T v{};
      if constexpr (std::is_same_v<T, double>) v = std::stod(*node, &used);
      else if constexpr (std::is_same_v<T, std::uint64_t>) v = std::stoull(*node, &used);
      else v = static_cast<T>(std::stoll(*node, &used));
      if (used != node->size()) throw std::invalid_argument(*node);
      return v;
    } catch (const std::exception&) {
      throw ValidationError(path + ": '" + *node + "' is not a valid number");
    }
  };
  auto get_str = [&](const std::string& path, const std::string& fallback) {
    return tree.get<std::string>(path, fallback);
  };

  c.mollifier.shape = parse_shape(get_str("mollifier.shape", std::string(to_string(c.mollifier.shape))));
  c.mollifier.mass = get("mollifier.mass", c.mollifier.mass);
  c.mollifier.samples = get("mollifier.samples", c.mollifier.samples);
  c.L = get("grid.L", c.L);
  c.nx = get("grid.nx", c.nx);
  c.dt = get("grid.dt", c.dt);
  c.seed = get("noise.seed", c.seed);
  c.alpha = get("schedule.alpha", c.alpha);
  c.beta = get("schedule.beta", c.beta);
  if (auto v = tree.get_optional<std::string>("schedule.eps")) c.eps_list = detail::parse_list("schedule.eps", *v);
  c.mu = get("schedule.mu", c.mu);
  c.sigma = get("schedule.sigma", c.sigma);
  c.lambda = get("schedule.lambda", c.lambda);
  c.kappa_target = get("schedule.kappa", c.kappa_target);
  c.nu_target = get("schedule.nu", c.nu_target);
  c.kind = parse_kind(get_str("experiment.kind", to_string(c.kind)));
  if (auto v = tree.get_optional<std::string>("experiment.times")) c.times = detail::parse_list("experiment.times", *v);
  c.replicas = get("experiment.replicas", c.replicas);
  c.workers = get("experiment.workers", c.workers);
  const auto flux = get_str("experiment.flux", "central");
  if (flux == "central") c.scheme.flux_form = FluxForm::ConservativeCentral;
  else if (flux == "upwind") c.scheme.flux_form = FluxForm::Upwind;
  else throw ValidationError("experiment.flux: expected central or upwind");
  const auto tilt = get_str("experiment.tilt", "euler");
  if (tilt == "euler") c.scheme.tilt_form = TiltForm::Euler;
  else if (tilt == "exponential") c.scheme.tilt_form = TiltForm::Exponential;
  else throw ValidationError("experiment.tilt: expected euler or exponential");
  c.scheme.stability_factor = get("experiment.stability_factor", c.scheme.stability_factor);
  if (auto v = tree.get_optional<std::string>("experiment.lambda_mu_sqrt_eps"))
    c.lambda_mu_sqrt_eps = detail::parse_list("experiment.lambda_mu_sqrt_eps", *v);
  if (auto v = tree.get_optional<std::string>("experiment.alpha_range"))
    c.alpha_range = detail::parse_range("experiment.alpha_range", *v);
  if (auto v = tree.get_optional<std::string>("experiment.beta_range"))
    c.beta_range = detail::parse_range("experiment.beta_range", *v);
  c.grid_points = get("experiment.grid_points", c.grid_points);
  c.twopoint_replicas = get("experiment.twopoint_replicas", c.twopoint_replicas);
  validate(c);
  return c;
}

inline LabConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

/// Canonical INI text of the resolved configuration: fixed key order, round-trip
/// number formatting. Two configs resolve equal iff their canonical texts match,
/// and parsing the text gives the configuration back.
inline std::string canonical(const LabConfig& c) {
  using detail::fmt;
  std::string s, section;
  auto kv = [&](const std::string& k, const std::string& v) {
    const auto dot = k.find('.');
    if (k.substr(0, dot) != section) {
      section = k.substr(0, dot);
      s += "[" + section + "]\n";
    }
    s += k.substr(dot + 1) + " = " + v + "\n";
  };
  kv("mollifier.shape", std::string(to_string(c.mollifier.shape)));
  kv("mollifier.mass", fmt(c.mollifier.mass));
  kv("mollifier.samples", std::to_string(c.mollifier.samples));
  kv("grid.L", fmt(c.L));
  kv("grid.nx", std::to_string(c.nx));
  kv("grid.dt", fmt(c.dt));
  kv("noise.seed", std::to_string(c.seed));
  kv("schedule.alpha", fmt(c.alpha));
  kv("schedule.beta", fmt(c.beta));
  kv("schedule.eps", detail::join(c.eps_list));
  kv("schedule.mu", fmt(c.mu));
  kv("schedule.sigma", fmt(c.sigma));
  kv("schedule.lambda", fmt(c.lambda));
  kv("schedule.kappa", fmt(c.kappa_target));
  kv("schedule.nu", fmt(c.nu_target));
  kv("experiment.kind", to_string(c.kind));
  kv("experiment.times", detail::join(c.times));
  kv("experiment.replicas", std::to_string(c.replicas));
  kv("experiment.flux", c.scheme.flux_form == FluxForm::Upwind ? "upwind" : "central");
  kv("experiment.tilt", c.scheme.tilt_form == TiltForm::Exponential ? "exponential" : "euler");
  kv("experiment.stability_factor", fmt(c.scheme.stability_factor));
  kv("experiment.lambda_mu_sqrt_eps", detail::join(c.lambda_mu_sqrt_eps));
  kv("experiment.alpha_range", fmt(c.alpha_range.lo) + ":" + fmt(c.alpha_range.hi));
  kv("experiment.beta_range", fmt(c.beta_range.lo) + ":" + fmt(c.beta_range.hi));
  kv("experiment.grid_points", std::to_string(c.grid_points));
  kv("experiment.twopoint_replicas", std::to_string(c.twopoint_replicas));
  return s;
}

/// FNV-1a 64-bit hash of the canonical text, as 16 lowercase hex digits.
/// The worker count does not enter: outputs do not depend on it.
inline std::string config_hash(const LabConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace turbolab::lab
