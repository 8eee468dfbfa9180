#pragma once

// Replica ensembles: streaming moments and a block-ordered parallel map/merge.
// Replicas are grouped into fixed-size blocks; each block is reduced on a worker
// and blocks are merged in index order, so results do not depend on the number
// of threads or on scheduling.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace turbolab {

/// Mean and variance accumulator (Welford, mergeable).
struct RunningStats {
  std::int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) noexcept {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  void merge(const RunningStats& o) noexcept {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double nt = static_cast<double>(n + o.n);
    const double d = o.mean - mean;
    mean += d * static_cast<double>(o.n) / nt;
    m2 += o.m2 + d * d * static_cast<double>(n) * static_cast<double>(o.n) / nt;
    n += o.n;
  }
  double variance() const noexcept { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double se() const noexcept { return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

/// Pointwise RunningStats over a vector of fixed length.
struct FieldStats {
  std::int64_t n = 0;
  std::vector<double> mean, m2;

  explicit FieldStats(std::size_t size = 0) : mean(size, 0.0), m2(size, 0.0) {}

  void push(const std::vector<double>& x) {
    if (mean.empty()) {
      mean.assign(x.size(), 0.0);
      m2.assign(x.size(), 0.0);
    }
    ++n;
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - mean[j];
      mean[j] += d * inv;
      m2[j] += d * (x[j] - mean[j]);
    }
  }
  void merge(const FieldStats& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double nt = static_cast<double>(n + o.n);
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double d = o.mean[j] - mean[j];
      mean[j] += d * static_cast<double>(o.n) / nt;
      m2[j] += o.m2[j] + d * d * static_cast<double>(n) * static_cast<double>(o.n) / nt;
    }
    n += o.n;
  }
  double variance(std::size_t j) const noexcept {
    return n > 1 ? m2[j] / static_cast<double>(n - 1) : 0.0;
  }
  double se(std::size_t j) const noexcept {
    return n > 1 ? std::sqrt(variance(j) / static_cast<double>(n)) : 0.0;
  }
};

inline unsigned default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

/// Runs `block_fn(first, last)` for consecutive replica blocks of `block_size`
/// and folds the block results with `merge(acc, block_result)` in block order.
/// The first exception thrown by any block is rethrown after all workers stop.
template <class R, class BlockFn, class Merge>
R run_blocks(std::int64_t replicas, std::int64_t block_size, unsigned workers, BlockFn&& block_fn,
             Merge&& merge, R init = R{}) {
  if (replicas <= 0) return init;
  block_size = std::max<std::int64_t>(block_size, 1);
  const std::int64_t nblocks = (replicas + block_size - 1) / block_size;
  std::vector<std::optional<R>> results(static_cast<std::size_t>(nblocks));
  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (;;) {
      const std::int64_t b = next.fetch_add(1);
      if (b >= nblocks) return;
      {
        std::lock_guard lock(error_mutex);
        if (error) return;
      }
      try {
        const std::int64_t first = b * block_size;
        const std::int64_t last = std::min(replicas, first + block_size);
        results[static_cast<std::size_t>(b)] = block_fn(first, last);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(nblocks)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  R acc = std::move(init);
  for (auto& r : results) merge(acc, *r);
  return acc;
}

}  // namespace turbolab
