#pragma once

// Space-time white noise on the periodic grid and its mollified fields W^eps.
//
// Draws live on a base lattice that may be finer than the simulation grid by
// integer factors (refine_x, refine_t). Coarse increments are sums of base
// draws, so grids that share a seed and a base lattice see the same Brownian
// sheet. That is what the refinement studies rely on.

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>

#include "turbolab/covariance.hpp"
#include "turbolab/errors.hpp"
#include "turbolab/grid.hpp"
#include "turbolab/rng.hpp"

namespace turbolab {

struct NoiseGrid {
  Grid grid;
  double dt = 1e-4;
  std::uint64_t seed = 1;
  int refine_x = 1;  // base cells per grid cell
  int refine_t = 1;  // base steps per time step

  void validate() const {
    grid.validate();
    if (!(dt > 0.0) || !std::isfinite(dt)) throw ValidationError("grid.dt must be positive");
    if (refine_x < 1 || refine_t < 1) throw ValidationError("noise refinement factors must be >= 1");
  }
};

struct FieldIncrement {
  std::vector<double> values;
  double eps = 0.0;
  std::int64_t time_index = 0;
};

/// Base-lattice standard normals for fine step kf, cells [0, n).
inline void base_normals(const Key2& key, std::uint64_t kf, std::span<double> out) {
  const auto n = out.size();
  const auto lo = static_cast<std::uint32_t>(kf), hi = static_cast<std::uint32_t>(kf >> 32);
  std::size_t j = 0;
  for (std::uint32_t b = 0; j < n; ++b) {
    const auto z = normals4(Counter4{b, lo, hi, 0x0A015Eu}, key);
    for (int q = 0; q < 4 && j < n; ++q) out[j++] = z[q];
  }
}

/// xi_{k,j} ~ N(0, dt dx), i.i.d., a pure function of (seed, k, j) and the base lattice.
inline void sample_white_increments(const NoiseGrid& ng, std::int64_t time_index, std::span<double> out) {
  if (time_index < 0) throw ValidationError("time_index must be non-negative");
  const auto nx = ng.grid.size();
  if (out.size() != nx) throw ValidationError("white increment buffer has wrong size");
  const Key2 key = key_from_seed(ng.seed);
  const double scale = std::sqrt(ng.dt * ng.grid.dx() / (ng.refine_x * ng.refine_t));
  if (ng.refine_x == 1 && ng.refine_t == 1) {
    base_normals(key, static_cast<std::uint64_t>(time_index), out);
    for (double& v : out) v *= scale;
    return;
  }
  const auto rx = static_cast<std::size_t>(ng.refine_x);
  std::vector<double> fine(nx * rx);
  std::fill(out.begin(), out.end(), 0.0);
  for (int b = 0; b < ng.refine_t; ++b) {
    base_normals(key, static_cast<std::uint64_t>(time_index) * ng.refine_t + b, fine);
    for (std::size_t j = 0; j < nx; ++j)
      for (std::size_t a = 0; a < rx; ++a) out[j] += fine[j * rx + a];
  }
  for (double& v : out) v *= scale;
}

inline std::vector<double> sample_white_increments(const NoiseGrid& ng, std::int64_t time_index) {
  std::vector<double> out(ng.grid.size());
  sample_white_increments(ng, time_index, out);
  return out;
}

namespace detail {
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Circular convolution with rho_eps on a fixed grid. Holds scratch buffers,
/// so use one instance per worker. Keeps a pointer to `cov`, which must outlive it.
class FieldMollifier {
public:
  static constexpr int kDirectMaxSupport = 64;

  FieldMollifier(const Grid& grid, const CovarianceSpec& cov, const ScaleParams& p)
      : grid_(grid), eps_(p.eps), cov_(&cov), params_(p) {
    const double dx = grid.dx();
    if (p.eps < 4.0 * dx)
      throw ResolutionError("mollifier under-resolved: eps = " + std::to_string(p.eps) +
                            " < 4 dx = " + std::to_string(4.0 * dx));
    if (2.0 * p.eps >= grid.L)
      throw ResolutionError("mollifier support does not fit in the periodic domain");
    half_ = static_cast<int>(std::floor(p.eps / dx));
    kernel_.resize(2 * static_cast<std::size_t>(half_) + 1);
    for (int m = -half_; m <= half_; ++m)
      kernel_[static_cast<std::size_t>(m + half_)] = scaled_mollifier(cov, p, m * dx);
    if (static_cast<int>(kernel_.size()) > kDirectMaxSupport) setup_fft();
  }

  FieldMollifier(const FieldMollifier&) = delete;
  FieldMollifier& operator=(const FieldMollifier&) = delete;
  ~FieldMollifier() {
    if (fwd_) {
      std::lock_guard lock(detail::fftw_plan_mutex());
      fftw_destroy_plan(fwd_);
      fftw_destroy_plan(bwd_);
    }
  }

  bool uses_fft() const noexcept { return fwd_ != nullptr; }
  double eps() const noexcept { return eps_; }
  const std::vector<double>& kernel() const noexcept { return kernel_; }

  /// out[j] = sum_i rho_eps(x_j - x_i) xi[i], periodic in j.
  void apply(std::span<const double> xi, std::span<double> out) {
    const int nx = grid_.nx;
    if (static_cast<int>(xi.size()) != nx || static_cast<int>(out.size()) != nx)
      throw ValidationError("mollify: buffer size mismatch");
    if (!uses_fft()) {
      for (int j = 0; j < nx; ++j) {
        double acc = 0.0;
        int i = j + half_;  // xi index for m = -half
        if (j - half_ >= 0 && j + half_ < nx) {
          for (int m = 0; m < static_cast<int>(kernel_.size()); ++m) acc += kernel_[m] * xi[i - m];
        } else {
          for (int m = 0; m < static_cast<int>(kernel_.size()); ++m) {
            int ii = (i - m) % nx;
            if (ii < 0) ii += nx;
            acc += kernel_[m] * xi[ii];
          }
        }
        out[j] = acc;
      }
      return;
    }
    std::copy(xi.begin(), xi.end(), real_.begin());
    fftw_execute_dft_r2c(fwd_, real_.data(), reinterpret_cast<fftw_complex*>(spec_.data()));
    for (std::size_t q = 0; q < spec_.size(); ++q) spec_[q] *= kspec_[q];
    fftw_execute_dft_c2r(bwd_, reinterpret_cast<fftw_complex*>(spec_.data()), real_.data());
    const double inv = 1.0 / nx;
    for (int j = 0; j < nx; ++j) out[j] = real_[j] * inv;
  }

  /// out[j] = sum_i rho_eps(x_j + shift - x_i) xi[i]: the same white noise
  /// mollified at shifted points (moving frame). Always direct.
  void apply_shifted(std::span<const double> xi, std::span<double> out, double shift) {
    const int nx = grid_.nx;
    const double dx = grid_.dx();
    if (static_cast<int>(xi.size()) != nx || static_cast<int>(out.size()) != nx)
      throw ValidationError("mollify: buffer size mismatch");
    const double s = shift / dx;
    const auto base = static_cast<long long>(std::floor(s));
    const double frac = (s - static_cast<double>(base)) * dx;
    // rho_eps(x_j + shift - x_i) = rho_eps((j + base - i) dx + frac); m = j + base - i
    const int lo = -half_ - 1, hi = half_;
    shifted_.resize(static_cast<std::size_t>(hi - lo + 1));
    for (int m = lo; m <= hi; ++m) shifted_[m - lo] = scaled_mollifier(*cov_, params_, m * dx + frac);
    const long long b = ((base % nx) + nx) % nx;
    for (int j = 0; j < nx; ++j) {
      double acc = 0.0;
      for (int m = lo; m <= hi; ++m) {
        long long i = (j + b - m) % nx;
        if (i < 0) i += nx;
        acc += shifted_[m - lo] * xi[static_cast<std::size_t>(i)];
      }
      out[j] = acc;
    }
  }

private:
  void setup_fft() {
    const int nx = grid_.nx;
    real_.assign(nx, 0.0);
    spec_.assign(nx / 2 + 1, {});
    kspec_.assign(nx / 2 + 1, {});
    {
      std::lock_guard lock(detail::fftw_plan_mutex());
      fwd_ = fftw_plan_dft_r2c_1d(nx, real_.data(), reinterpret_cast<fftw_complex*>(spec_.data()),
                                  FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_c2r_1d(nx, reinterpret_cast<fftw_complex*>(spec_.data()), real_.data(),
                                  FFTW_ESTIMATE);
    }
    std::fill(real_.begin(), real_.end(), 0.0);
    for (int m = -half_; m <= half_; ++m) real_[((m % nx) + nx) % nx] += kernel_[m + half_];
    fftw_execute_dft_r2c(fwd_, real_.data(), reinterpret_cast<fftw_complex*>(kspec_.data()));
  }

  Grid grid_;
  double eps_;
  const CovarianceSpec* cov_;
  ScaleParams params_;
  int half_ = 0;
  std::vector<double> kernel_, shifted_;
  std::vector<double> real_;
  std::vector<std::complex<double>> spec_, kspec_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

inline FieldIncrement mollify(const NoiseGrid& ng, std::span<const double> xi, std::int64_t time_index,
                              const CovarianceSpec& cov, const ScaleParams& p) {
  FieldMollifier m(ng.grid, cov, p);
  FieldIncrement f{std::vector<double>(ng.grid.size()), p.eps, time_index};
  m.apply(xi, f.values);
  return f;
}

/// All fields of the family from the same white increments at time_index.
inline std::vector<FieldIncrement> coupled_family(const NoiseGrid& ng, std::int64_t time_index,
                                                  const CovarianceSpec& cov,
                                                  const std::vector<ScaleParams>& params) {
  const auto xi = sample_white_increments(ng, time_index);
  std::vector<FieldIncrement> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(mollify(ng, xi, time_index, cov, p));
  return out;
}

/// Little-endian float64 dump of one slice (`--dump-noise k`).
inline void write_f64_le(const std::string& path, std::span<const double> values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    os.write(bytes, 8);
  }
}

}  // namespace turbolab
