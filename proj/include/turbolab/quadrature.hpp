#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

namespace turbolab::quad {

/// Composite Simpson over uniformly spaced samples f[0], f[stride], ..., f[n-1].
/// (n-1)/stride must be even.
inline double simpson(std::span<const double> f, double h, std::size_t stride = 1) {
  const std::size_t intervals = (f.size() - 1) / stride;
  if (f.size() < 3 || (f.size() - 1) % stride != 0 || intervals % 2 != 0)
    throw std::invalid_argument("simpson: need an even number of intervals");
  double odd = 0.0, even = 0.0;
  for (std::size_t i = 1; i < intervals; ++i) {
    (i % 2 ? odd : even) += f[i * stride];
  }
  const double step = h * static_cast<double>(stride);
  return step / 3.0 * (f.front() + f.back() + 4.0 * odd + 2.0 * even);
}

/// Simpson on tabulated samples with stride halving until the relative change
/// drops below rtol or the native resolution is reached.
inline double simpson_refined(std::span<const double> f, double h, double rtol = 1e-8) {
  const std::size_t intervals = f.size() - 1;
  std::size_t stride = 1;
  while (intervals % (4 * stride) == 0 && intervals / (2 * stride) >= 32) stride *= 2;
  double prev = simpson(f, h, stride);
  while (stride > 1) {
    stride /= 2;
    const double cur = simpson(f, h, stride);
    if (std::abs(cur - prev) <= rtol * std::abs(cur)) return cur;
    prev = cur;
  }
  return prev;
}

/// Adaptive-by-refinement composite Simpson of a callable on [a, b].
template <class F>
double simpson_adaptive(F&& fn, double a, double b, double rtol = 1e-10, int max_level = 22) {
  std::size_t n = 64;
  auto eval = [&](std::size_t intervals) {
    const double h = (b - a) / static_cast<double>(intervals);
    double odd = 0.0, even = 0.0;
    for (std::size_t i = 1; i < intervals; ++i) (i % 2 ? odd : even) += fn(a + h * i);
    return h / 3.0 * (fn(a) + fn(b) + 4.0 * odd + 2.0 * even);
  };
  double prev = eval(n);
  for (int level = 0; level < max_level; ++level) {
    n *= 2;
    const double cur = eval(n);
    if (std::abs(cur - prev) <= rtol * std::abs(cur) || std::abs(cur - prev) < 1e-300) return cur;
    prev = cur;
  }
  return prev;
}

}  // namespace turbolab::quad
