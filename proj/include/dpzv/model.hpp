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

// Device embedding models, the server head, and in-place seeded
// perturbation of flat parameter vectors.
//
// Parameters are stored as `Scalar` (float by default, double for
// high-precision checks); all arithmetic on activations is done in double.

#ifndef DPZV_MODEL_HPP_
#define DPZV_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dpzv/common.hpp"
#include "dpzv/numerics.hpp"
#include "dpzv/param_storage.hpp"

namespace dpzv {

enum class ModelKind : uint32_t {
  kLinear = 0,
  kMlp1 = 1,
  kServerHead = 2,
};

inline std::string ModelKindName(ModelKind kind) {
  switch (kind) {
    case ModelKind::kLinear: return "linear";
    case ModelKind::kMlp1: return "mlp1";
    case ModelKind::kServerHead: return "server_head";
  }
  return "unknown";
}

/// One affine layer: weight [out x in] row-major followed by bias [out].
struct LayerShape {
  uint32_t in = 0;
  uint32_t out = 0;

  std::size_t ParamCount() const noexcept {
    return static_cast<std::size_t>(in) * out + out;
  }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

template <class Scalar>
class FlatParams {
 public:
  using Storage = std::vector<Scalar, param_storage::TrackedAllocator<Scalar>>;

  FlatParams(ModelKind kind, std::vector<LayerShape> layers)
      : kind_(kind), layers_(std::move(layers)) {
    std::size_t total = 0;
    for (const auto& l : layers_) {
      DPZV_ENFORCE(l.in > 0 && l.out > 0, ErrorCode::kInvalidDimension,
                   "layer dimensions must be positive");
      offsets_.push_back(total);
      total += l.ParamCount();
    }
    values_.assign(total, Scalar{0});
  }

  ModelKind kind() const noexcept { return kind_; }
  const std::vector<LayerShape>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<Scalar> values() noexcept { return values_; }
  std::span<const Scalar> values() const noexcept { return values_; }

  std::span<const Scalar> weights(std::size_t layer) const {
    return std::span<const Scalar>(values_).subspan(
        offsets_[layer],
        static_cast<std::size_t>(layers_[layer].in) * layers_[layer].out);
  }
  std::span<const Scalar> bias(std::size_t layer) const {
    return std::span<const Scalar>(values_).subspan(
        offsets_[layer] +
            static_cast<std::size_t>(layers_[layer].in) * layers_[layer].out,
        layers_[layer].out);
  }
  std::span<Scalar> weights(std::size_t layer) {
    return std::span<Scalar>(values_).subspan(
        offsets_[layer],
        static_cast<std::size_t>(layers_[layer].in) * layers_[layer].out);
  }
  std::span<Scalar> bias(std::size_t layer) {
    return std::span<Scalar>(values_).subspan(
        offsets_[layer] +
            static_cast<std::size_t>(layers_[layer].in) * layers_[layer].out,
        layers_[layer].out);
  }
  std::size_t LayerOffset(std::size_t layer) const { return offsets_[layer]; }

 private:
  ModelKind kind_;
  std::vector<LayerShape> layers_;
  std::vector<std::size_t> offsets_;
  Storage values_;
};

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, weights and bias.
template <class Scalar>
void InitUniform(FlatParams<Scalar>& params, uint64_t seed) {
  SeededStream stream(seed);
  for (std::size_t l = 0; l < params.layers().size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(params.layers()[l].in));
    for (auto& w : params.weights(l)) {
      w = static_cast<Scalar>((2.0 * stream.NextUniform() - 1.0) * bound);
    }
    for (auto& b : params.bias(l)) {
      b = static_cast<Scalar>((2.0 * stream.NextUniform() - 1.0) * bound);
    }
  }
}

namespace internal {

template <class Scalar>
Matrix AffineForward(std::span<const Scalar> w, std::span<const Scalar> b,
                     const LayerShape& shape, const Matrix& x) {
  Matrix y(x.rows(), shape.out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    for (std::size_t o = 0; o < shape.out; ++o) {
      double acc = static_cast<double>(b[o]);
      const Scalar* wo = w.data() + o * shape.in;
      for (std::size_t i = 0; i < shape.in; ++i) {
        acc += static_cast<double>(wo[i]) * xr[i];
      }
      y(r, o) = acc;
    }
  }
  return y;
}

inline void ReluInPlace(Matrix& m) {
  for (auto& v : m.data()) v = v > 0.0 ? v : 0.0;
}

// Accumulates dW = g^T x and db = sum_rows(g) into grad (layout of the
// layer at `offset`), and returns g * W (gradient w.r.t. x) if requested.
template <class Scalar>
Matrix AffineBackward(std::span<const Scalar> w, const LayerShape& shape,
                      const Matrix& x, const Matrix& g,
                      std::span<double> grad_layer, bool want_input_grad) {
  const std::size_t n_w = static_cast<std::size_t>(shape.in) * shape.out;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    auto gr = g.row(r);
    for (std::size_t o = 0; o < shape.out; ++o) {
      const double go = gr[o];
      if (go == 0.0) continue;
      double* dwo = grad_layer.data() + o * shape.in;
      for (std::size_t i = 0; i < shape.in; ++i) dwo[i] += go * xr[i];
      grad_layer[n_w + o] += go;
    }
  }
  Matrix dx;
  if (want_input_grad) {
    dx = Matrix(x.rows(), shape.in);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto gr = g.row(r);
      auto dxr = dx.row(r);
      for (std::size_t o = 0; o < shape.out; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        const Scalar* wo = w.data() + o * shape.in;
        for (std::size_t i = 0; i < shape.in; ++i) {
          dxr[i] += go * static_cast<double>(wo[i]);
        }
      }
    }
  }
  return dx;
}

}  // namespace internal

/// h(w_m; x): a linear map or a one-hidden-layer ReLU MLP.
template <class Scalar>
class DeviceModel {
 public:
  static DeviceModel Linear(std::size_t input_dim, std::size_t embed_dim) {
    return DeviceModel(FlatParams<Scalar>(
        ModelKind::kLinear, {{static_cast<uint32_t>(input_dim),
                              static_cast<uint32_t>(embed_dim)}}));
  }
  static DeviceModel Mlp1(std::size_t input_dim, std::size_t hidden_dim,
                          std::size_t embed_dim) {
    return DeviceModel(FlatParams<Scalar>(
        ModelKind::kMlp1,
        {{static_cast<uint32_t>(input_dim), static_cast<uint32_t>(hidden_dim)},
         {static_cast<uint32_t>(hidden_dim),
          static_cast<uint32_t>(embed_dim)}}));
  }

  explicit DeviceModel(FlatParams<Scalar> params) : params_(std::move(params)) {
    const auto n = params_.layers().size();
    DPZV_ENFORCE((params_.kind() == ModelKind::kLinear && n == 1) ||
                     (params_.kind() == ModelKind::kMlp1 && n == 2),
                 ErrorCode::kShape, "layer list does not match device model kind");
    if (n == 2) {
      DPZV_ENFORCE(params_.layers()[0].out == params_.layers()[1].in,
                   ErrorCode::kShape, "mlp1 layer dimensions do not chain");
    }
  }

  std::size_t input_dim() const { return params_.layers().front().in; }
  std::size_t embed_dim() const { return params_.layers().back().out; }
  ModelKind kind() const { return params_.kind(); }

  FlatParams<Scalar>& params() noexcept { return params_; }
  const FlatParams<Scalar>& params() const noexcept { return params_; }

 private:
  FlatParams<Scalar> params_;
};

template <class Scalar>
Matrix ForwardEmbedding(const DeviceModel<Scalar>& model, const Matrix& x) {
  DPZV_ENFORCE(x.cols() == model.input_dim(), ErrorCode::kShape,
               "feature width " + std::to_string(x.cols()) +
                   " does not match model input_dim " +
                   std::to_string(model.input_dim()));
  const auto& p = model.params();
  const auto& layers = p.layers();
  Matrix h = internal::AffineForward(p.weights(0), p.bias(0), layers[0], x);
  if (model.kind() == ModelKind::kMlp1) {
    internal::ReluInPlace(h);
    h = internal::AffineForward(p.weights(1), p.bias(1), layers[1], h);
  }
  return h;
}

/// Gradient w.r.t. the device parameters of sum_r <grad_embed[r], h(w; x_r)>,
/// i.e. the chain rule from embedding gradients back into w_m.
template <class Scalar>
std::vector<double> DeviceParamGradient(const DeviceModel<Scalar>& model,
                                        const Matrix& x,
                                        const Matrix& grad_embed) {
  DPZV_ENFORCE(x.cols() == model.input_dim() && grad_embed.rows() == x.rows() &&
                   grad_embed.cols() == model.embed_dim(),
               ErrorCode::kShape, "device backward shape mismatch");
  const auto& p = model.params();
  const auto& layers = p.layers();
  std::vector<double> grad(p.size(), 0.0);
  std::span<double> g(grad);
  if (model.kind() == ModelKind::kLinear) {
    internal::AffineBackward(p.weights(0), layers[0], x, grad_embed,
                             g.subspan(p.LayerOffset(0), layers[0].ParamCount()),
                             false);
    return grad;
  }
  Matrix z1 = internal::AffineForward(p.weights(0), p.bias(0), layers[0], x);
  Matrix a1 = z1;
  internal::ReluInPlace(a1);
  Matrix da = internal::AffineBackward(
      p.weights(1), layers[1], a1, grad_embed,
      g.subspan(p.LayerOffset(1), layers[1].ParamCount()), true);
  for (std::size_t k = 0; k < da.data().size(); ++k) {
    if (z1.data()[k] <= 0.0) da.data()[k] = 0.0;
  }
  internal::AffineBackward(p.weights(0), layers[0], x, da,
                           g.subspan(p.LayerOffset(0), layers[0].ParamCount()),
                           false);
  return grad;
}

/// Two linear layers with a ReLU between them, followed by softmax
/// cross-entropy against the server-held labels.
template <class Scalar>
class ServerHead {
 public:
  ServerHead(std::size_t concat_dim, std::size_t hidden_dim,
             std::size_t num_classes)
      : params_(ModelKind::kServerHead,
                {{static_cast<uint32_t>(concat_dim),
                  static_cast<uint32_t>(hidden_dim)},
                 {static_cast<uint32_t>(hidden_dim),
                  static_cast<uint32_t>(num_classes)}}) {}

  explicit ServerHead(FlatParams<Scalar> params) : params_(std::move(params)) {
    DPZV_ENFORCE(params_.kind() == ModelKind::kServerHead &&
                     params_.layers().size() == 2 &&
                     params_.layers()[0].out == params_.layers()[1].in,
                 ErrorCode::kShape, "invalid server head layer list");
  }

  std::size_t concat_dim() const { return params_.layers()[0].in; }
  std::size_t hidden_dim() const { return params_.layers()[0].out; }
  std::size_t num_classes() const { return params_.layers()[1].out; }

  FlatParams<Scalar>& params() noexcept { return params_; }
  const FlatParams<Scalar>& params() const noexcept { return params_; }

 private:
  FlatParams<Scalar> params_;
};

namespace internal {

template <class Scalar>
void CheckHeadInputs(const ServerHead<Scalar>& head, const Matrix& x,
                     std::span<const int32_t> labels) {
  DPZV_ENFORCE(x.cols() == head.concat_dim(), ErrorCode::kShape,
               "concatenated embedding width does not match head");
  DPZV_ENFORCE(labels.size() == x.rows(), ErrorCode::kShape,
               "label count does not match batch rows");
  for (int32_t y : labels) {
    DPZV_ENFORCE(y >= 0 && static_cast<std::size_t>(y) < head.num_classes(),
                 ErrorCode::kValidation,
                 "label " + std::to_string(y) + " outside [0, " +
                     std::to_string(head.num_classes()) + ")");
  }
}

// Cross-entropy of one logit row; log1p keeps saturated rows accurate.
inline double CrossEntropy(std::span<const double> logits, int32_t label) {
  const auto max_it = std::max_element(logits.begin(), logits.end());
  const double m = *max_it;
  double rest = 0.0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != max_it) rest += std::exp(*it - m);
  }
  return (m - logits[label]) + std::log1p(rest);
}

}  // namespace internal

template <class Scalar>
Matrix HeadLogits(const ServerHead<Scalar>& head, const Matrix& x) {
  DPZV_ENFORCE(x.cols() == head.concat_dim(), ErrorCode::kShape,
               "concatenated embedding width does not match head");
  const auto& p = head.params();
  Matrix a = internal::AffineForward(p.weights(0), p.bias(0), p.layers()[0], x);
  internal::ReluInPlace(a);
  return internal::AffineForward(p.weights(1), p.bias(1), p.layers()[1], a);
}

/// Per-sample cross-entropy losses.
template <class Scalar>
std::vector<double> HeadLoss(const ServerHead<Scalar>& head, const Matrix& x,
                             std::span<const int32_t> labels) {
  internal::CheckHeadInputs(head, x, labels);
  const Matrix logits = HeadLogits(head, x);
  std::vector<double> loss(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    loss[r] = internal::CrossEntropy(logits.row(r), labels[r]);
  }
  return loss;
}

template <class Scalar>
double MeanHeadLoss(const ServerHead<Scalar>& head, const Matrix& x,
                    std::span<const int32_t> labels) {
  const auto loss = HeadLoss(head, x, labels);
  return std::accumulate(loss.begin(), loss.end(), 0.0) /
         static_cast<double>(loss.size());
}

struct HeadBackwardResult {
  double mean_loss = 0.0;
  std::vector<double> param_grad;  // d(mean loss)/d(head params)
  Matrix input_grad;               // d(mean loss)/d(concat embeddings)
};

template <class Scalar>
HeadBackwardResult HeadBackward(const ServerHead<Scalar>& head, const Matrix& x,
                                std::span<const int32_t> labels,
                                bool want_input_grad = true) {
  internal::CheckHeadInputs(head, x, labels);
  DPZV_ENFORCE(x.rows() > 0, ErrorCode::kValidation, "empty batch");
  const auto& p = head.params();
  const auto& layers = p.layers();
  const double inv_b = 1.0 / static_cast<double>(x.rows());

  Matrix z1 = internal::AffineForward(p.weights(0), p.bias(0), layers[0], x);
  Matrix a1 = z1;
  internal::ReluInPlace(a1);
  Matrix logits = internal::AffineForward(p.weights(1), p.bias(1), layers[1], a1);

  HeadBackwardResult out;
  Matrix dlogits(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto lr = logits.row(r);
    out.mean_loss += internal::CrossEntropy(lr, labels[r]) * inv_b;
    const double m = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (double v : lr) z += std::exp(v - m);
    for (std::size_t k = 0; k < lr.size(); ++k) {
      const double prob = std::exp(lr[k] - m) / z;
      dlogits(r, k) =
          (prob - (static_cast<int32_t>(k) == labels[r] ? 1.0 : 0.0)) * inv_b;
    }
  }

  out.param_grad.assign(p.size(), 0.0);
  std::span<double> g(out.param_grad);
  Matrix da = internal::AffineBackward(
      p.weights(1), layers[1], a1, dlogits,
      g.subspan(p.LayerOffset(1), layers[1].ParamCount()), true);
  for (std::size_t k = 0; k < da.data().size(); ++k) {
    if (z1.data()[k] <= 0.0) da.data()[k] = 0.0;
  }
  out.input_grad = internal::AffineBackward(
      p.weights(0), layers[0], x, da,
      g.subspan(p.LayerOffset(0), layers[0].ParamCount()), want_input_grad);
  return out;
}

/// Exact gradient of the mean per-sample loss w.r.t. the head parameters.
template <class Scalar>
std::vector<double> HeadGradient(const ServerHead<Scalar>& head, const Matrix& x,
                                 std::span<const int32_t> labels) {
  return HeadBackward(head, x, labels, false).param_grad;
}

template <class Scalar>
std::vector<int32_t> HeadPredict(const ServerHead<Scalar>& head, const Matrix& x) {
  const Matrix logits = HeadLogits(head, x);
  std::vector<int32_t> pred(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto lr = logits.row(r);
    pred[r] = static_cast<int32_t>(std::max_element(lr.begin(), lr.end()) -
                                   lr.begin());
  }
  return pred;
}

/// Seed and current position of an in-place perturbation, in units of
/// lambda * u(seed).
struct PerturbRecord {
  uint64_t seed = 0;
  double lambda = 0.0;
  int current_offset = 0;
};

/// w += coeff * u, with u regenerated from `seed` coordinate by coordinate.
template <class Scalar>
void AddScaledDirection(FlatParams<Scalar>& params, uint64_t seed, double coeff) {
  if (coeff == 0.0) return;
  auto v = params.values();
  SphereDirection dir(v.size(), SeededStream(seed));
  dir.ForEach([&](std::size_t i, double u) {
    v[i] = static_cast<Scalar>(static_cast<double>(v[i]) + coeff * u);
  });
}

/// Moves the parameters from record.current_offset to target_offset (both in
/// {-1, 0, +1}) without allocating a second parameter buffer.
template <class Scalar>
void PerturbInPlace(FlatParams<Scalar>& params, PerturbRecord& record,
                    int target_offset) {
  DPZV_ENFORCE(target_offset >= -1 && target_offset <= 1 &&
                   record.current_offset >= -1 && record.current_offset <= 1,
               ErrorCode::kInvalidParameter, "perturbation offsets must be in {-1,0,1}");
  const int steps = target_offset - record.current_offset;
  AddScaledDirection(params, record.seed, steps * record.lambda);
  record.current_offset = target_offset;
}

}  // namespace dpzv

#endif  // DPZV_MODEL_HPP_
