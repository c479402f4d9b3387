// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPZV_NUMERICS_HPP_
#define DPZV_NUMERICS_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dpzv/common.hpp"

namespace dpzv {

/// splitmix64 finalizer.
constexpr uint64_t Mix64(uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for a logical actor (server, device, scheduler, ...) derived from the
/// run's master seed. Distinct actor ids give unrelated streams.
constexpr uint64_t DeriveSeed(uint64_t master_seed, uint64_t actor_id) noexcept {
  return Mix64(Mix64(master_seed ^ 0x6A09E667F3BCC909ULL) +
               0x9E3779B97F4A7C15ULL * (actor_id + 1));
}

/// Counter-based random source. The i-th draw is a pure function of
/// (seed, i), so any position of the stream can be replayed without storing
/// what was drawn.
class SeededStream {
 public:
  constexpr SeededStream() = default;
  constexpr explicit SeededStream(uint64_t seed, uint64_t counter = 0) noexcept
      : seed_(seed), key_(Mix64(seed)), counter_(counter) {}

  constexpr uint64_t seed() const noexcept { return seed_; }
  constexpr uint64_t counter() const noexcept { return counter_; }

  constexpr uint64_t NextU64() noexcept {
    return Mix64(key_ + 0x9E3779B97F4A7C15ULL * (++counter_));
  }

  constexpr void Advance(uint64_t k) noexcept { counter_ += k; }

  /// Uniform on the open interval (0, 1).
  constexpr double NextUniform() noexcept {
    return (static_cast<double>(NextU64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; always consumes exactly two draws.
  double NextNormal() noexcept {
    const double u1 = NextUniform();
    const double u2 = NextUniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n), unbiased (rejection sampling).
  uint64_t NextIndex(uint64_t n) {
    DPZV_ENFORCE(n > 0, ErrorCode::kInvalidParameter,
                 "NextIndex requires n > 0");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = NextU64();
    while (x >= limit) x = NextU64();
    return x % n;
  }

  friend constexpr bool operator==(const SeededStream& a,
                                   const SeededStream& b) noexcept {
    return a.seed_ == b.seed_ && a.counter_ == b.counter_;
  }

 private:
  uint64_t seed_ = 0;
  uint64_t key_ = Mix64(0);
  uint64_t counter_ = 0;
};

/// A direction u uniform on the radius-sqrt(dim) sphere that is never
/// materialised: construction makes one pass over the Gaussian draws to get
/// the norm, and ForEach() replays the same draws to visit u coordinate-wise.
class SphereDirection {
 public:
  SphereDirection(std::size_t dim, SeededStream start) : dim_(dim), start_(start) {
    DPZV_ENFORCE(dim > 0, ErrorCode::kInvalidDimension,
                 "sphere dimension must be >= 1");
    SeededStream s = start_;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double z = s.NextNormal();
      sum_sq += z * z;
    }
    end_ = s;
    scale_ = std::sqrt(static_cast<double>(dim_)) / std::sqrt(sum_sq);
  }

  std::size_t dim() const noexcept { return dim_; }

  /// Stream state after the direction's draws are consumed.
  SeededStream end_state() const noexcept { return end_; }

  /// Calls fn(i, u_i) for i = 0..dim-1 in order.
  template <class Fn>
  void ForEach(Fn&& fn) const {
    SeededStream s = start_;
    for (std::size_t i = 0; i < dim_; ++i) {
      fn(i, s.NextNormal() * scale_);
    }
  }

  std::vector<double> Materialize() const {
    std::vector<double> u(dim_);
    ForEach([&u](std::size_t i, double v) { u[i] = v; });
    return u;
  }

 private:
  std::size_t dim_;
  SeededStream start_;
  SeededStream end_;
  double scale_ = 0.0;
};

/// Uniform draw from sqrt(dim) * S^{dim-1}; advances `stream` past the draws.
inline std::vector<double> SampleSphere(std::size_t dim, SeededStream& stream) {
  SphereDirection dir(dim, stream);
  stream = dir.end_state();
  return dir.Materialize();
}

/// Draw from N(0, sigma^2). Consumes two draws even when sigma == 0 so that
/// stream positions do not depend on the noise level.
inline double SampleGaussian(double sigma, SeededStream& stream) {
  DPZV_ENFORCE(sigma >= 0.0 && !std::isnan(sigma),
               ErrorCode::kInvalidParameter, "sigma must be >= 0");
  const double z = stream.NextNormal();
  if (sigma == 0.0) return 0.0;
  return sigma * z;
}

/// Standard normal CDF. erfc is accurate to a few ulp relative, which gives
/// absolute error well under 1e-12 on the whole real line.
inline double StdNormalCdf(double x) noexcept {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// log Phi(x), finite for arbitrarily negative x.
inline double LogStdNormalCdf(double x) noexcept {
  if (x > -35.0) return std::log(StdNormalCdf(x));
  // Asymptotic expansion of the Mills ratio; truncation error < 1e-15 here.
  const double inv_x2 = 1.0 / (x * x);
  double term = 1.0;
  double series = 1.0;
  for (int k = 1; k <= 6; ++k) {
    term *= -static_cast<double>(2 * k - 1) * inv_x2;
    series += term;
  }
  return -0.5 * x * x - std::log(-x) -
         0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

}  // namespace dpzv

#endif  // DPZV_NUMERICS_HPP_
