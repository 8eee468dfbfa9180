#pragma once

// Counter-based Philox4x32-10 plus helpers to turn blocks into normals.
// A draw is a pure function of (key, counter), so any slice of the noise can be
// regenerated without replaying a stream.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace turbolab {

using Counter4 = std::array<std::uint32_t, 4>;
using Key2 = std::array<std::uint32_t, 2>;

namespace philox_detail {
constexpr std::uint32_t M0 = 0xD2511F53u;
constexpr std::uint32_t M1 = 0xCD9E8D57u;
constexpr std::uint32_t W0 = 0x9E3779B9u;
constexpr std::uint32_t W1 = 0xBB67AE85u;

inline void round(Counter4& c, const Key2& k) noexcept {
  const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * c[2];
  const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
  const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}
}  // namespace philox_detail

inline Counter4 philox4x32(Counter4 ctr, Key2 key) noexcept {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      key[0] += philox_detail::W0;
      key[1] += philox_detail::W1;
    }
    philox_detail::round(ctr, key);
  }
  return ctr;
}

inline Key2 key_from_seed(std::uint64_t seed) noexcept {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent seed for replica `index` of an experiment seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ull));
}

/// Uniform on the open interval (0, 1).
inline double u01(std::uint32_t x) noexcept { return (static_cast<double>(x) + 0.5) * 0x1p-32; }

/// Four standard normals from one Philox block (two Box-Muller pairs).
inline std::array<double, 4> normals4(const Counter4& ctr, const Key2& key) noexcept {
  const Counter4 b = philox4x32(ctr, key);
  std::array<double, 4> z{};
  for (int p = 0; p < 2; ++p) {
    const double r = std::sqrt(-2.0 * std::log(u01(b[2 * p])));
    const double th = 2.0 * std::numbers::pi * u01(b[2 * p + 1]);
    z[2 * p] = r * std::cos(th);
    z[2 * p + 1] = r * std::sin(th);
  }
  return z;
}

/// Sequential normal generator over a private counter space (stream id in
/// the top word). Cheap to copy; two streams with different ids never overlap.
class NormalStream {
public:
  NormalStream(std::uint64_t seed, std::uint32_t stream) noexcept
      : key_(key_from_seed(seed)), stream_(stream) {}

  double operator()() noexcept {
    if (pos_ == 4) refill();
    return buf_[pos_++];
  }

  double uniform() noexcept {
    const Counter4 b = philox4x32(next_counter(), key_);
    return u01(b[0]);
  }

private:
  Counter4 next_counter() noexcept {
    const Counter4 c{static_cast<std::uint32_t>(n_), static_cast<std::uint32_t>(n_ >> 32), 0x5EEDu,
                     stream_};
    ++n_;
    return c;
  }
  void refill() noexcept {
    buf_ = normals4(next_counter(), key_);
    pos_ = 0;
  }

  Key2 key_;
  std::uint32_t stream_;
  std::uint64_t n_ = 0;
  std::array<double, 4> buf_{};
  int pos_ = 4;
};

}  // namespace turbolab
