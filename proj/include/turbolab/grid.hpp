#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "turbolab/errors.hpp"

namespace turbolab {

/// Periodic grid on [-L, L) with nodes x_j = -L + j dx.
struct Grid {
  double L = 4.0;
  int nx = 512;

  double dx() const noexcept { return 2.0 * L / nx; }
  double x(int j) const noexcept { return -L + j * dx(); }
  std::size_t size() const noexcept { return static_cast<std::size_t>(nx); }

  void validate() const {
    if (!(L > 0.0) || !std::isfinite(L)) throw ValidationError("grid.L must be positive");
    if (nx < 8 || nx % 2 != 0) throw ValidationError("grid.nx must be an even integer >= 8");
  }

  /// Wrap a coordinate into [-L, L).
  double wrap(double y) const noexcept {
    const double w = 2.0 * L;
    y = std::fmod(y + L, w);
    if (y < 0.0) y += w;
    return y - L;
  }

  bool operator==(const Grid&) const = default;
};

/// A function on the periodic grid at time t.
struct GridField {
  Grid grid;
  std::vector<double> values;
  double t = 0.0;

  GridField() = default;
  GridField(const Grid& g, double time) : grid(g), values(g.size(), 0.0), t(time) {}

  double mass() const noexcept {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.dx();
  }
  double l2sq() const noexcept {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s * grid.dx();
  }
  /// Linear interpolation with periodic wrap.
  double at(double y) const noexcept {
    const double s = (grid.wrap(y) + grid.L) / grid.dx();
    auto i = static_cast<int>(std::floor(s));
    const double w = s - i;
    i %= grid.nx;
    const int i1 = (i + 1) % grid.nx;
    return (1.0 - w) * values[static_cast<std::size_t>(i)] + w * values[static_cast<std::size_t>(i1)];
  }
};

}  // namespace turbolab
