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

#ifndef DPZV_ZO_HPP_
#define DPZV_ZO_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "dpzv/common.hpp"
#include "dpzv/model.hpp"
#include "dpzv/numerics.hpp"

namespace dpzv {

/// Denominator of the two-point finite difference: 2*lambda (the estimator
/// whose expectation is the smoothed gradient) or lambda.
enum class DivisorMode { kTwoLambda, kOneLambda };

struct ZoConfig {
  double lambda = 1e-3;
  DivisorMode divisor_mode = DivisorMode::kTwoLambda;
  double clip_c = std::numeric_limits<double>::infinity();
  double sigma_dp = 0.0;

  void Validate() const {
    DPZV_ENFORCE(lambda > 0.0 && std::isfinite(lambda),
                 ErrorCode::kInvalidParameter, "lambda must be > 0");
    DPZV_ENFORCE(clip_c > 0.0, ErrorCode::kInvalidParameter, "clip C must be > 0");
    DPZV_ENFORCE(sigma_dp >= 0.0 && std::isfinite(sigma_dp),
                 ErrorCode::kInvalidParameter, "sigma_dp must be >= 0");
  }
};

/// The privatised per-round scalar returned to a device.
struct ScalarFeedback {
  double delta = 0.0;         // clipped mean + noise; the only value sent
  double noise = 0.0;         // recorded for analysis, never transmitted
  double clipped_mean = 0.0;  // delta - noise, always within [-C, C]
  int64_t round = 0;
  int32_t device_id = 0;
  std::size_t clipped_count = 0;
};

inline double TwoPointDelta(double f_plus, double f_minus, const ZoConfig& cfg) {
  DPZV_ENFORCE(std::isfinite(f_plus) && std::isfinite(f_minus),
               ErrorCode::kNumeric, "non-finite loss in two-point difference");
  const double denom =
      cfg.divisor_mode == DivisorMode::kTwoLambda ? 2.0 * cfg.lambda : cfg.lambda;
  return (f_plus - f_minus) / denom;
}

/// Symmetric clip to [-C, C].
inline double ClipScalar(double delta, double c) {
  DPZV_ENFORCE(c > 0.0, ErrorCode::kInvalidParameter, "clip C must be > 0");
  return std::clamp(delta, -c, c);
}

/// Mean of the clipped per-sample deltas plus one scalar Gaussian draw.
inline ScalarFeedback PrivatizeBatch(std::span<const double> deltas,
                                     const ZoConfig& cfg, SeededStream& stream,
                                     int64_t round = 0, int32_t device_id = 0) {
  DPZV_ENFORCE(!deltas.empty(), ErrorCode::kValidation,
               "cannot privatize an empty batch");
  ScalarFeedback fb;
  fb.round = round;
  fb.device_id = device_id;
  double sum = 0.0;
  for (double d : deltas) {
    DPZV_ENFORCE(std::isfinite(d), ErrorCode::kNumeric, "non-finite delta");
    const double c = ClipScalar(d, cfg.clip_c);
    if (c != d) ++fb.clipped_count;
    sum += c;
  }
  fb.clipped_mean = sum / static_cast<double>(deltas.size());
  fb.noise = SampleGaussian(cfg.sigma_dp, stream);
  fb.delta = fb.clipped_mean + fb.noise;
  return fb;
}

/// w_m <- w_m - eta * delta * u, with u regenerated from the record's seed.
template <class Scalar>
void DeviceApplyFeedback(FlatParams<Scalar>& params, const ScalarFeedback& fb,
                         double eta, const PerturbRecord& record) {
  DPZV_ENFORCE(record.current_offset == 0, ErrorCode::kProtocolState,
               "feedback applied while parameters are still perturbed");
  AddScaledDirection(params, record.seed, -eta * fb.delta);
}

/// (f(w + lambda u) - f(w - lambda u)) / (2 lambda) * u for a generic
/// objective over a dense vector.
template <class Objective>
std::vector<double> ZoGradientEstimate(Objective&& objective,
                                       std::span<const double> params,
                                       double lambda, SeededStream& stream) {
  DPZV_ENFORCE(lambda > 0.0, ErrorCode::kInvalidParameter, "lambda must be > 0");
  std::vector<double> u = SampleSphere(params.size(), stream);
  std::vector<double> w(params.begin(), params.end());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = params[i] + lambda * u[i];
  const double f_plus = objective(std::span<const double>(w));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = params[i] - lambda * u[i];
  const double f_minus = objective(std::span<const double>(w));
  DPZV_ENFORCE(std::isfinite(f_plus) && std::isfinite(f_minus),
               ErrorCode::kNumeric, "objective not finite at w +/- lambda u");
  const double delta = (f_plus - f_minus) / (2.0 * lambda);
  for (auto& v : u) v *= delta;
  return u;
}

/// One in-place two-point ZO descent step on `params` for a scalar
/// objective of the parameters. Returns the finite difference used.
template <class Scalar, class Objective>
double ZoDescentStep(FlatParams<Scalar>& params, Objective&& objective,
                     const ZoConfig& cfg, double eta, SeededStream& stream) {
  PerturbRecord record{stream.NextU64(), cfg.lambda, 0};
  PerturbInPlace(params, record, +1);
  const double f_plus = objective(params);
  PerturbInPlace(params, record, -1);
  const double f_minus = objective(params);
  PerturbInPlace(params, record, 0);
  const double delta = TwoPointDelta(f_plus, f_minus, cfg);
  AddScaledDirection(params, record.seed, -eta * delta);
  return delta;
}

/// Server head update by the two-point estimator on w_0.
template <class Scalar>
double ServerZoStep(ServerHead<Scalar>& head, const Matrix& batch,
                    std::span<const int32_t> labels, const ZoConfig& cfg,
                    double eta, SeededStream& stream) {
  DPZV_ENFORCE(batch.rows() > 0, ErrorCode::kProtocolState,
               "server step requires a populated embedding batch");
  return ZoDescentStep(
      head.params(),
      [&](const FlatParams<Scalar>&) { return MeanHeadLoss(head, batch, labels); },
      cfg, eta, stream);
}

/// Server head update by exact gradient descent.
template <class Scalar>
void ServerFoStep(ServerHead<Scalar>& head, const Matrix& batch,
                  std::span<const int32_t> labels, double eta) {
  DPZV_ENFORCE(batch.rows() > 0, ErrorCode::kProtocolState,
               "server step requires a populated embedding batch");
  if (eta == 0.0) return;
  const auto grad = HeadGradient(head, batch, labels);
  auto v = head.params().values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<Scalar>(static_cast<double>(v[i]) - eta * grad[i]);
  }
}

}  // namespace dpzv

#endif  // DPZV_ZO_HPP_
