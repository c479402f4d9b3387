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

// Gaussian differential privacy accountant.
//
// A run with T rounds, dataset size D, batch size B and scalar clip C that
// adds N(0, sigma^2) to each round's clipped batch mean is mu-GDP with
//   mu_step = (B/D) * (2C/B) / sigma,   mu = sqrt(T) * mu_step,
// and mu-GDP is equivalent to (eps, delta(eps))-DP for every eps >= 0 with
//   delta(eps) = Phi(-eps/mu + mu/2) - e^eps * Phi(-eps/mu - mu/2).

#ifndef DPZV_PRIVACY_HPP_
#define DPZV_PRIVACY_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

#include "dpzv/common.hpp"
#include "dpzv/numerics.hpp"

namespace dpzv {

inline constexpr double kMuBracketLow = 1e-6;
inline constexpr double kMuBracketHigh = 100.0;
inline constexpr int kBisectionIterations = 200;

inline double GdpToDelta(double mu, double epsilon) {
  DPZV_ENFORCE(mu > 0.0 && std::isfinite(mu), ErrorCode::kInvalidParameter,
               "mu must be > 0");
  DPZV_ENFORCE(epsilon >= 0.0 && !std::isnan(epsilon),
               ErrorCode::kInvalidParameter, "epsilon must be >= 0");
  if (std::isinf(epsilon)) return 0.0;
  const double a = -epsilon / mu + mu / 2.0;
  const double b = -epsilon / mu - mu / 2.0;
  const double first = StdNormalCdf(a);
  const double second = epsilon > 30.0
                            ? std::exp(epsilon + LogStdNormalCdf(b))
                            : std::exp(epsilon) * StdNormalCdf(b);
  return std::clamp(first - second, 0.0, 1.0);
}

/// mu with GdpToDelta(mu, epsilon) == delta_target, by bisection over
/// [1e-6, 100] (delta is increasing in mu).
inline double SolveMu(double epsilon, double delta_target) {
  DPZV_ENFORCE(epsilon > 0.0 && std::isfinite(epsilon),
               ErrorCode::kInvalidParameter, "epsilon must be finite and > 0");
  DPZV_ENFORCE(delta_target > 0.0 && delta_target < 1.0,
               ErrorCode::kInvalidParameter, "delta must be in (0, 1)");
  double lo = kMuBracketLow;
  double hi = kMuBracketHigh;
  const double d_lo = GdpToDelta(lo, epsilon);
  const double d_hi = GdpToDelta(hi, epsilon);
  if (delta_target < d_lo || delta_target > d_hi) {
    std::ostringstream msg;
    msg.precision(6);
    msg << "delta=" << delta_target << " unreachable for epsilon=" << epsilon
        << ": mu in [" << lo << ", " << hi << "] spans delta in [" << d_lo
        << ", " << d_hi << "]";
    throw Error(ErrorCode::kBracket, msg.str());
  }
  for (int i = 0; i < kBisectionIterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (GdpToDelta(mid, epsilon) < delta_target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Smallest epsilon with GdpToDelta(mu, epsilon) <= delta_target
/// (delta is decreasing in epsilon). Returns 0 if delta(0) already fits.
inline double SolveEpsilon(double mu, double delta_target) {
  DPZV_ENFORCE(delta_target > 0.0 && delta_target < 1.0,
               ErrorCode::kInvalidParameter, "delta must be in (0, 1)");
  if (std::isinf(mu)) return std::numeric_limits<double>::infinity();
  if (GdpToDelta(mu, 0.0) <= delta_target) return 0.0;
  double lo = 0.0;
  double hi = 1.0;
  while (GdpToDelta(mu, hi) > delta_target) {
    lo = hi;
    hi *= 2.0;
    DPZV_ENFORCE(hi < 1e6, ErrorCode::kBracket,
                 "epsilon bracket exceeded 1e6 for mu=" + std::to_string(mu));
  }
  for (int i = 0; i < kBisectionIterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    (GdpToDelta(mu, mid) > delta_target ? lo : hi) = mid;
  }
  return hi;
}

/// sigma_dp = 2 C sqrt(T) / (D mu).
inline double NoiseScale(double c, int64_t rounds, int64_t dataset_size, double mu) {
  DPZV_ENFORCE(c > 0.0 && rounds > 0 && dataset_size > 0 && mu > 0.0,
               ErrorCode::kInvalidParameter,
               "noise scale requires C, T, D, mu > 0");
  return 2.0 * c * std::sqrt(static_cast<double>(rounds)) /
         (static_cast<double>(dataset_size) * mu);
}

/// T-fold composition of mu-GDP mechanisms.
inline double Compose(double mu_per_step, int64_t rounds) {
  DPZV_ENFORCE(rounds >= 1, ErrorCode::kInvalidParameter, "T must be >= 1");
  return std::sqrt(static_cast<double>(rounds)) * mu_per_step;
}

/// GDP level of one round: sample rate B/D times sensitivity 2C/B over sigma.
inline double PerStepMu(double c, int64_t batch_size, int64_t dataset_size,
                        double sigma_dp) {
  DPZV_ENFORCE(c > 0.0 && batch_size > 0 && dataset_size > 0,
               ErrorCode::kInvalidParameter, "C, B, D must be > 0");
  DPZV_ENFORCE(sigma_dp > 0.0, ErrorCode::kInfinitePrivacyLoss,
               "sigma_dp = 0 gives no finite privacy guarantee");
  const double rate = static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  const double sensitivity = 2.0 * c / static_cast<double>(batch_size);
  return rate * sensitivity / sigma_dp;
}

// Forward-noise baseline: every round releases B individual embeddings, each
// norm-clipped to C, so one sample moves the release by at most 2C (no 1/B).

inline double EmbeddingReleaseMu(double c, int64_t batch_size, int64_t dataset_size,
                                 double sigma) {
  DPZV_ENFORCE(c > 0.0 && batch_size > 0 && dataset_size > 0,
               ErrorCode::kInvalidParameter, "C, B, D must be > 0");
  DPZV_ENFORCE(sigma > 0.0, ErrorCode::kInfinitePrivacyLoss,
               "sigma = 0 gives no finite privacy guarantee");
  const double rate = static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  return rate * 2.0 * c / sigma;
}

inline double EmbeddingNoiseScale(double c, int64_t rounds, int64_t dataset_size,
                                  int64_t batch_size, double mu) {
  DPZV_ENFORCE(batch_size > 0, ErrorCode::kInvalidParameter, "B must be > 0");
  return NoiseScale(c, rounds, dataset_size, mu) * static_cast<double>(batch_size);
}

/// Xi = 2 sqrt(2 pi) exp(-C0^2 / (8 ell^2)), a bound on the probability that
/// a per-sample difference is clipped when C >= C0 + L lambda d / 2.
inline double ClipProbabilityBound(double c0, double ell) {
  DPZV_ENFORCE(c0 >= 0.0 && ell > 0.0, ErrorCode::kInvalidParameter,
               "clip bound requires C0 >= 0, ell > 0");
  return 2.0 * std::sqrt(2.0 * std::numbers::pi) *
         std::exp(-(c0 * c0) / (8.0 * ell * ell));
}

struct PrivacySpec {
  double mu = std::numeric_limits<double>::infinity();
  double epsilon = std::numeric_limits<double>::infinity();
  double delta = 1e-3;
  int64_t rounds = 0;
  int64_t dataset_size = 0;
  int64_t batch_size = 0;
  double clip_c = 0.0;
  double sigma_dp = 0.0;

  bool is_private() const { return sigma_dp > 0.0 && std::isfinite(mu); }

  /// Calibrates sigma_dp for an (epsilon, delta) target; epsilon = inf
  /// yields the non-private sigma_dp = 0.
  static PrivacySpec Calibrate(double epsilon, double delta, int64_t rounds,
                               int64_t dataset_size, int64_t batch_size,
                               double clip_c) {
    PrivacySpec p;
    p.epsilon = epsilon;
    p.delta = delta;
    p.rounds = rounds;
    p.dataset_size = dataset_size;
    p.batch_size = batch_size;
    p.clip_c = clip_c;
    if (std::isinf(epsilon) || rounds == 0) {
      p.sigma_dp = 0.0;
      p.mu = std::numeric_limits<double>::infinity();
      return p;
    }
    p.mu = SolveMu(epsilon, delta);
    p.sigma_dp = NoiseScale(clip_c, rounds, dataset_size, p.mu);
    return p;
  }

  /// Accounts an explicit sigma_dp.
  static PrivacySpec FromSigma(double sigma_dp, double delta, int64_t rounds,
                               int64_t dataset_size, int64_t batch_size,
                               double clip_c) {
    PrivacySpec p;
    p.delta = delta;
    p.rounds = rounds;
    p.dataset_size = dataset_size;
    p.batch_size = batch_size;
    p.clip_c = clip_c;
    p.sigma_dp = sigma_dp;
    if (sigma_dp > 0.0 && rounds > 0) {
      p.mu = Compose(PerStepMu(clip_c, batch_size, dataset_size, sigma_dp), rounds);
      p.epsilon = SolveEpsilon(p.mu, delta);
    }
    return p;
  }
};

}  // namespace dpzv

#endif  // DPZV_PRIVACY_HPP_
