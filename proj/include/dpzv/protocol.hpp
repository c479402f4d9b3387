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

// Discrete-event simulation of asynchronous zeroth-order vertical federated
// training with a scalar, differentially private backward channel.
//
// One logical timeline: each round the scheduler activates one device, the
// device uploads two perturbed embedding blocks, the server answers with a
// single privatised scalar, and both sides update. Asynchrony shows up as
// random activation order plus stale server-side embedding caches.

#ifndef DPZV_PROTOCOL_HPP_
#define DPZV_PROTOCOL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpzv/checkpoint.hpp"
#include "dpzv/common.hpp"
#include "dpzv/data.hpp"
#include "dpzv/model.hpp"
#include "dpzv/numerics.hpp"
#include "dpzv/privacy.hpp"
#include "dpzv/zo.hpp"

namespace dpzv {

enum class Algorithm { kDpzv, kDpzvNoClip, kDpzvNoNoise, kFoForwardNoise };
enum class ServerMode { kSgd, kZo };

inline std::string AlgorithmName(Algorithm a) {
  switch (a) {
    case Algorithm::kDpzv: return "dpzv";
    case Algorithm::kDpzvNoClip: return "dpzv_no_clip";
    case Algorithm::kDpzvNoNoise: return "dpzv_no_noise";
    case Algorithm::kFoForwardNoise: return "fo_forward_noise";
  }
  return "unknown";
}

inline std::string ServerModeName(ServerMode m) {
  return m == ServerMode::kSgd ? "sgd" : "zo";
}

struct DeviceSpec {
  ModelKind kind = ModelKind::kLinear;
  std::size_t embed_dim = 4;
  std::size_t hidden_dim = 8;  // mlp1 only
  double eta = 0.05;
  double lambda = 1e-3;
  double participation = 1.0;
};

struct RunConfig {
  Algorithm algorithm = Algorithm::kDpzv;
  ServerMode server_mode = ServerMode::kSgd;
  int64_t rounds = 1000;
  std::size_t batch_size = 32;
  uint64_t seed = 1;
  std::vector<DeviceSpec> devices;
  std::size_t head_hidden = 16;
  double eta0 = 0.05;
  double lambda0 = 1e-3;
  double clip_c = 1.0;
  std::optional<double> epsilon;  // +inf means non-private
  double delta = 1e-3;
  std::optional<double> sigma_dp;
  DivisorMode divisor_mode = DivisorMode::kTwoLambda;
  bool fairness_cap = true;
  std::optional<int64_t> tau;  // default 10 * M
  uint32_t scalar_width = 4;
  uint32_t id_width = 4;
  int64_t eval_every = 100;

  int64_t EffectiveTau() const {
    return tau.value_or(10 * static_cast<int64_t>(devices.size()));
  }

  void Validate() const {
    auto cfg_check = [](bool ok, const std::string& msg) {
      DPZV_ENFORCE(ok, ErrorCode::kConfiguration, msg);
    };
    cfg_check(!devices.empty(), "at least one device is required");
    cfg_check(rounds >= 0, "rounds must be >= 0");
    cfg_check(batch_size >= 1, "batch_size must be >= 1");
    cfg_check(head_hidden >= 1, "server hidden width must be >= 1");
    cfg_check(eta0 >= 0.0 && lambda0 > 0.0, "server eta must be >= 0 and lambda > 0");
    cfg_check(clip_c > 0.0, "clip must be > 0");
    cfg_check(!(epsilon && sigma_dp),
              "specify either epsilon/delta or sigma_dp, not both");
    cfg_check(!epsilon || *epsilon > 0.0, "epsilon must be > 0");
    cfg_check(delta > 0.0 && delta < 1.0, "delta must be in (0, 1)");
    cfg_check(!sigma_dp || *sigma_dp >= 0.0, "sigma_dp must be >= 0");
    cfg_check(!tau || *tau >= 1, "tau must be >= 1");
    cfg_check(scalar_width == 4 || scalar_width == 8, "scalar_width must be 4 or 8");
    cfg_check(id_width >= 1 && id_width <= 8, "id_width must be in [1, 8]");
    cfg_check(eval_every >= 1, "eval_every must be >= 1");
    double q_total = 0.0;
    for (const auto& d : devices) {
      cfg_check(d.embed_dim >= 1, "device embed_dim must be >= 1");
      cfg_check(d.kind != ModelKind::kMlp1 || d.hidden_dim >= 1,
                "device hidden width must be >= 1");
      cfg_check(d.kind != ModelKind::kServerHead, "device model cannot be server_head");
      cfg_check(d.eta >= 0.0 && d.lambda > 0.0,
                "device eta must be >= 0 and lambda > 0");
      cfg_check(d.participation >= 0.0 && d.participation <= 1.0,
                "participation must be in [0, 1]");
      q_total += d.participation;
    }
    cfg_check(q_total > 0.0, "all device participation probabilities are zero");
  }
};

/// Bytes exchanged with one device in one round. Round 0 is warmup.
struct LedgerEntry {
  int64_t round = 0;
  int32_t device = 0;
  uint64_t uplink_payload_bytes = 0;
  uint64_t uplink_id_bytes = 0;
  uint64_t downlink_bytes = 0;

  uint64_t uplink_bytes() const { return uplink_payload_bytes + uplink_id_bytes; }
  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

/// V_T = sum over rounds and devices of uplink + downlink bytes.
inline uint64_t CommVolume(std::span<const LedgerEntry> entries,
                           bool include_ids = true) {
  uint64_t total = 0;
  for (const auto& e : entries) {
    total += e.uplink_payload_bytes + e.downlink_bytes +
             (include_ids ? e.uplink_id_bytes : 0);
  }
  return total;
}

class CommLedger {
 public:
  void Charge(const LedgerEntry& e) {
    entries_.push_back(e);
    total_with_ids_ += e.uplink_bytes() + e.downlink_bytes;
    total_without_ids_ += e.uplink_payload_bytes + e.downlink_bytes;
  }

  std::span<const LedgerEntry> entries() const { return entries_; }
  uint64_t Total(bool include_ids = true) const {
    return include_ids ? total_with_ids_ : total_without_ids_;
  }

  void WriteCsv(std::ostream& os) const {
    os << "round,device,uplink_payload_bytes,uplink_id_bytes,downlink_bytes\n";
    for (const auto& e : entries_) {
      os << e.round << ',' << e.device << ',' << e.uplink_payload_bytes << ','
         << e.uplink_id_bytes << ',' << e.downlink_bytes << '\n';
    }
  }

 private:
  std::vector<LedgerEntry> entries_;
  uint64_t total_with_ids_ = 0;
  uint64_t total_without_ids_ = 0;
};

/// Server copy of the latest embedding of every (device, sample) with the
/// round that produced it.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  EmbeddingCache(std::size_t num_samples, std::vector<std::size_t> embed_dims)
      : embed_dims_(std::move(embed_dims)) {
    for (std::size_t d : embed_dims_) {
      values_.emplace_back(num_samples, d);
      stamps_.emplace_back(num_samples, kUnpopulated);
    }
  }

  static constexpr int64_t kUnpopulated = -1;

  std::size_t num_devices() const { return embed_dims_.size(); }
  std::size_t embed_dim(std::size_t m) const { return embed_dims_[m]; }
  std::size_t concat_dim() const {
    std::size_t total = 0;
    for (std::size_t d : embed_dims_) total += d;
    return total;
  }

  void Store(std::size_t m, uint32_t id, std::span<const double> h, int64_t stamp) {
    DPZV_ENFORCE(h.size() == embed_dims_[m], ErrorCode::kShape,
                 "cached embedding width mismatch");
    DPZV_ENFORCE(stamp >= stamps_[m][id], ErrorCode::kProtocolState,
                 "cache stamps must not decrease");
    std::copy(h.begin(), h.end(), values_[m].row(id).begin());
    stamps_[m][id] = stamp;
  }

  bool Populated(std::size_t m, uint32_t id) const {
    return stamps_[m][id] != kUnpopulated;
  }
  int64_t Stamp(std::size_t m, uint32_t id) const { return stamps_[m][id]; }

  std::span<const double> Get(std::size_t m, uint32_t id) const {
    DPZV_ENFORCE(Populated(m, id), ErrorCode::kProtocolState,
                 "embedding cache entry (" + std::to_string(m) + ", " +
                     std::to_string(id) + ") not populated");
    return values_[m].row(id);
  }

  std::size_t PopulatedCount() const {
    std::size_t n = 0;
    for (const auto& s : stamps_) {
      for (int64_t v : s) n += v != kUnpopulated;
    }
    return n;
  }

  /// Concatenated [h_1 | ... | h_M] rows for `ids`, taking device
  /// `fresh_device`'s block from `fresh` instead of the cache.
  Matrix ConcatBatch(std::span<const uint32_t> ids,
                     std::optional<std::size_t> fresh_device = std::nullopt,
                     const Matrix* fresh = nullptr) const {
    Matrix out(ids.size(), concat_dim());
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto dst = out.row(k).begin();
      for (std::size_t m = 0; m < embed_dims_.size(); ++m) {
        std::span<const double> src =
            fresh_device && *fresh_device == m ? fresh->row(k) : Get(m, ids[k]);
        dst = std::copy(src.begin(), src.end(), dst);
      }
    }
    return out;
  }

 private:
  std::vector<std::size_t> embed_dims_;
  std::vector<Matrix> values_;
  std::vector<std::vector<int64_t>> stamps_;
};

/// Picks the next device: proportional to participation, except that with a
/// fairness cap a device whose staleness would exceed tau is forced (most
/// stale first, ties to the lowest id). Always consumes one draw.
inline std::size_t ScheduleNext(std::span<const double> participation,
                                std::span<const int64_t> last_served, int64_t clock,
                                std::optional<int64_t> tau, SeededStream& stream) {
  DPZV_ENFORCE(!participation.empty() && participation.size() == last_served.size(),
               ErrorCode::kConfiguration, "scheduler needs at least one device");
  double total = 0.0;
  for (double q : participation) total += q;
  DPZV_ENFORCE(total > 0.0, ErrorCode::kConfiguration,
               "all device participation probabilities are zero");
  const double r = stream.NextUniform() * total;
  std::size_t pick = participation.size();
  double acc = 0.0;
  for (std::size_t m = 0; m < participation.size(); ++m) {
    if (participation[m] <= 0.0) continue;
    acc += participation[m];
    pick = m;
    if (r < acc) break;
  }
  if (tau) {
    // Device m must be served by round last_served[m] + tau + 1. Force the
    // earliest deadline as soon as some k deadlines fall within the next k
    // rounds; otherwise two overdue devices could push one past tau.
    const int64_t now = clock + 1;
    std::vector<std::pair<int64_t, std::size_t>> due;
    for (std::size_t m = 0; m < last_served.size(); ++m) {
      if (participation[m] <= 0.0) continue;  // never scheduled, never forced
      due.emplace_back(last_served[m] + *tau + 1, m);
    }
    std::sort(due.begin(), due.end());
    for (std::size_t k = 0; k < due.size(); ++k) {
      if (due[k].first <= now + static_cast<int64_t>(k)) {
        pick = due.front().second;
        break;
      }
    }
  }
  return pick;
}

struct RoundRecord {
  int64_t round = 0;
  int32_t device = 0;
  std::vector<uint32_t> ids;
  uint64_t perturb_seed = 0;
  double feedback = 0.0;  // privatised scalar (dpzv family)
  double noise = 0.0;
  double clipped_mean = 0.0;
  std::size_t clipped_count = 0;
  double train_loss = 0.0;
  uint64_t uplink_bytes = 0;
  uint64_t downlink_bytes = 0;
  uint64_t downlink_scalars = 0;
  int64_t max_staleness = 0;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;

  /// One `key=value` line; doubles printed with %a so the dump is exact.
  std::string DebugLine() const {
    auto hex = [](double v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%a", v);
      return std::string(buf);
    };
    std::string s = "round=" + std::to_string(round) +
                    " device=" + std::to_string(device) +
                    " batch=" + std::to_string(ids.size()) +
                    " seed=" + std::to_string(perturb_seed) +
                    " feedback=" + hex(feedback) + " noise=" + hex(noise) +
                    " clipped_mean=" + hex(clipped_mean) +
                    " clipped=" + std::to_string(clipped_count) +
                    " train_loss=" + hex(train_loss) +
                    " up=" + std::to_string(uplink_bytes) +
                    " down=" + std::to_string(downlink_bytes) +
                    " down_scalars=" + std::to_string(downlink_scalars) +
                    " max_staleness=" + std::to_string(max_staleness) + " ids=";
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (k) s += ',';
      s += std::to_string(ids[k]);
    }
    return s;
  }
};

struct MetricsRow {
  int64_t round = 0;
  int32_t device = -1;  // -1 for the warmup row
  double train_loss = 0.0;
  std::optional<double> eval_acc;
  uint64_t uplink_bytes = 0;
  uint64_t downlink_bytes = 0;
  uint64_t cum_bytes = 0;
  int64_t max_staleness = 0;
  double realized_epsilon = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline std::string FormatReal(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

struct MetricsTrace {
  static constexpr const char* kCsvHeader =
      "round,device,train_loss,eval_acc,uplink_bytes,downlink_bytes,cum_bytes,"
      "max_staleness,realized_epsilon";

  std::vector<MetricsRow> rows;

  /// Last evaluated accuracy, if any.
  std::optional<double> FinalAccuracy() const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
      if (it->eval_acc) return it->eval_acc;
    }
    return std::nullopt;
  }

  /// First round whose evaluated accuracy reaches `target`.
  std::optional<int64_t> RoundsToTarget(double target) const {
    for (const auto& r : rows) {
      if (r.eval_acc && *r.eval_acc >= target) return r.round;
    }
    return std::nullopt;
  }

  /// Cumulative bytes at the first round reaching `target`.
  std::optional<uint64_t> BytesToTarget(double target) const {
    for (const auto& r : rows) {
      if (r.eval_acc && *r.eval_acc >= target) return r.cum_bytes;
    }
    return std::nullopt;
  }

  void WriteCsv(std::ostream& os) const {
    os << kCsvHeader << '\n';
    for (const auto& r : rows) {
      os << r.round << ',' << r.device << ',' << FormatReal(r.train_loss) << ','
         << (r.eval_acc ? FormatReal(*r.eval_acc) : std::string()) << ','
         << r.uplink_bytes << ',' << r.downlink_bytes << ',' << r.cum_bytes << ','
         << r.max_staleness << ',' << FormatReal(r.realized_epsilon) << '\n';
    }
  }
};

/// V_T over the rows of a trace (warmup included).
inline uint64_t CommVolume(const MetricsTrace& trace) {
  uint64_t total = 0;
  for (const auto& r : trace.rows) total += r.uplink_bytes + r.downlink_bytes;
  return total;
}

template <class Scalar>
struct DeviceState {
  DeviceModel<Scalar> model;
  DeviceSpec spec;
  int64_t local_round = 0;  // t_m
  SeededStream stream;
};

template <class Scalar>
struct ServerState {
  ServerHead<Scalar> head;
  EmbeddingCache cache;
  int64_t clock = 0;  // global round t
  CommLedger ledger;
  PrivacySpec privacy;
  SeededStream stream;
  SeededStream scheduler_stream;
};

// Actor ids used to derive per-actor streams from the master seed.
inline constexpr uint64_t kServerActor = 0;
inline constexpr uint64_t kSchedulerActor = 0xFFFF0001ULL;
inline constexpr uint64_t kInitPurpose = 0x1A17ULL;
inline uint64_t DeviceActor(std::size_t m) { return 1 + m; }

template <class Scalar = float>
class Simulation {
 public:
  Simulation(RunConfig cfg, const VerticalDataset& train,
             const VerticalDataset* eval = nullptr)
      : cfg_(std::move(cfg)),
        train_(&train),
        eval_(eval ? eval : &train),
        server_{MakeHead(cfg_, train), {}, 0, {}, {}, {}, {}} {
    cfg_.Validate();
    train_->Validate();
    DPZV_ENFORCE(cfg_.devices.size() == train_->num_devices(),
                 ErrorCode::kConfiguration,
                 "config has " + std::to_string(cfg_.devices.size()) +
                     " devices but dataset has " +
                     std::to_string(train_->num_devices()) + " partitions");
    DPZV_ENFORCE(cfg_.batch_size <= train_->size(), ErrorCode::kConfiguration,
                 "batch_size exceeds dataset size");
    if (eval_ != train_) {
      eval_->Validate();
      DPZV_ENFORCE(eval_->num_devices() == train_->num_devices(),
                   ErrorCode::kConfiguration, "eval dataset partition mismatch");
    }

    InitUniform(server_.head.params(),
                DeriveSeed(DeriveSeed(cfg_.seed, kServerActor), kInitPurpose));
    server_.stream = SeededStream(DeriveSeed(cfg_.seed, kServerActor));
    server_.scheduler_stream = SeededStream(DeriveSeed(cfg_.seed, kSchedulerActor));

    std::vector<std::size_t> embed_dims;
    for (std::size_t m = 0; m < cfg_.devices.size(); ++m) {
      const auto& spec = cfg_.devices[m];
      const std::size_t in = train_->input_dim(m);
      auto model = spec.kind == ModelKind::kLinear
                       ? DeviceModel<Scalar>::Linear(in, spec.embed_dim)
                       : DeviceModel<Scalar>::Mlp1(in, spec.hidden_dim, spec.embed_dim);
      InitUniform(model.params(),
                  DeriveSeed(DeriveSeed(cfg_.seed, DeviceActor(m)), kInitPurpose));
      devices_.push_back(DeviceState<Scalar>{
          std::move(model), spec, 0, SeededStream(DeriveSeed(cfg_.seed, DeviceActor(m)))});
      embed_dims.push_back(spec.embed_dim);
    }
    server_.cache = EmbeddingCache(train_->size(), embed_dims);
    server_.privacy = ResolvePrivacy();
  }

  const RunConfig& config() const { return cfg_; }
  ServerState<Scalar>& server() { return server_; }
  const ServerState<Scalar>& server() const { return server_; }
  std::vector<DeviceState<Scalar>>& devices() { return devices_; }
  const std::vector<DeviceState<Scalar>>& devices() const { return devices_; }
  bool warmed_up() const { return warmed_up_; }

  /// Replaces the initial models with checkpointed ones (head first, then
  /// devices in order). Only valid before warmup.
  void LoadModels(std::vector<FlatParams<Scalar>> models) {
    DPZV_ENFORCE(!warmed_up_, ErrorCode::kProtocolState,
                 "models must be loaded before warmup");
    DPZV_ENFORCE(models.size() == devices_.size() + 1, ErrorCode::kConsistency,
                 "checkpoint holds " + std::to_string(models.size()) +
                     " models, run needs " + std::to_string(devices_.size() + 1));
    auto same_shape = [](const FlatParams<Scalar>& a, const FlatParams<Scalar>& b) {
      if (a.kind() != b.kind() || a.layers().size() != b.layers().size()) return false;
      for (std::size_t l = 0; l < a.layers().size(); ++l) {
        if (a.layers()[l].in != b.layers()[l].in || a.layers()[l].out != b.layers()[l].out) {
          return false;
        }
      }
      return true;
    };
    DPZV_ENFORCE(same_shape(models[0], server_.head.params()), ErrorCode::kConsistency,
                 "checkpoint server head shape does not match config");
    for (std::size_t m = 0; m < devices_.size(); ++m) {
      DPZV_ENFORCE(same_shape(models[m + 1], devices_[m].model.params()),
                   ErrorCode::kConsistency,
                   "checkpoint device " + std::to_string(m) + " shape does not match config");
    }
    server_.head = ServerHead<Scalar>(std::move(models[0]));
    for (std::size_t m = 0; m < devices_.size(); ++m) {
      devices_[m].model = DeviceModel<Scalar>(std::move(models[m + 1]));
    }
  }

  /// Checkpoint bytes of the current models.
  std::string EncodeModels() const {
    std::vector<const FlatParams<Scalar>*> ptrs{&server_.head.params()};
    for (const auto& d : devices_) ptrs.push_back(&d.model.params());
    return EncodeCheckpoint<Scalar>(ptrs);
  }

  /// Noise standard deviation actually injected: on the scalar channel for
  /// the dpzv family, per embedding coordinate for the forward-noise baseline.
  double injected_sigma() const { return injected_sigma_; }

  /// Populates every cache entry from the initial models; charged at round 0.
  void Warmup() {
    DPZV_ENFORCE(!warmed_up_, ErrorCode::kProtocolState, "warmup already done");
    for (std::size_t m = 0; m < devices_.size(); ++m) {
      const Matrix h = ForwardEmbedding(devices_[m].model, train_->features[m]);
      for (uint32_t i = 0; i < train_->size(); ++i) {
        server_.cache.Store(m, i, h.row(i), 0);
      }
      server_.ledger.Charge(LedgerEntry{
          0, static_cast<int32_t>(m),
          static_cast<uint64_t>(train_->size()) * devices_[m].spec.embed_dim *
              cfg_.scalar_width,
          0, 0});
    }
    warmed_up_ = true;
  }

  std::size_t ScheduleNextDevice() {
    std::vector<double> q;
    std::vector<int64_t> last;
    for (const auto& d : devices_) {
      q.push_back(d.spec.participation);
      last.push_back(d.local_round);
    }
    return ScheduleNext(q, last, server_.clock,
                        cfg_.fairness_cap ? std::optional<int64_t>(cfg_.EffectiveTau())
                                          : std::nullopt,
                        server_.scheduler_stream);
  }

  /// One round of the scalar-feedback protocol for device m.
  RoundRecord Round(std::size_t m) {
    DPZV_ENFORCE(warmed_up_, ErrorCode::kProtocolState, "round before warmup");
    DPZV_ENFORCE(m < devices_.size(), ErrorCode::kValidation, "unknown device id");
    auto& dev = devices_[m];
    const std::size_t b = cfg_.batch_size;
    const std::size_t e = dev.spec.embed_dim;

    // (a) mini-batch and (b) two perturbed forward passes on the device.
    const auto ids = SampleBatchIds(train_->size(), b, dev.stream);
    const Matrix x = GatherRows(train_->features[m], ids);
    PerturbRecord record{dev.stream.NextU64(), dev.spec.lambda, 0};
    PerturbInPlace(dev.model.params(), record, +1);
    const Matrix h_plus = ForwardEmbedding(dev.model, x);
    PerturbInPlace(dev.model.params(), record, -1);
    const Matrix h_minus = ForwardEmbedding(dev.model, x);
    PerturbInPlace(dev.model.params(), record, 0);

    // (c) uplink: two embedding blocks plus sample ids.
    LedgerEntry entry{server_.clock + 1, static_cast<int32_t>(m),
                      2ull * b * e * cfg_.scalar_width,
                      static_cast<uint64_t>(b) * cfg_.id_width, 0};

    // (d) per-sample finite differences against cached embeddings of the
    // other devices.
    std::vector<int32_t> labels;
    labels.reserve(b);
    for (uint32_t id : ids) labels.push_back(train_->labels[id]);
    const auto loss_plus =
        HeadLoss(server_.head, server_.cache.ConcatBatch(ids, m, &h_plus), labels);
    const auto loss_minus =
        HeadLoss(server_.head, server_.cache.ConcatBatch(ids, m, &h_minus), labels);
    const ZoConfig zo = DeviceZoConfig(dev.spec);
    std::vector<double> deltas(b);
    for (std::size_t k = 0; k < b; ++k) {
      deltas[k] = TwoPointDelta(loss_plus[k], loss_minus[k], zo);
    }

    // (e) clip, average, add scalar noise; (f) one scalar downlink.
    const ScalarFeedback fb = PrivatizeBatch(deltas, zo, server_.stream,
                                             server_.clock + 1, static_cast<int32_t>(m));
    entry.downlink_bytes = cfg_.scalar_width;

    // (g) device update along the regenerated direction.
    DeviceApplyFeedback(dev.model.params(), fb, dev.spec.eta, record);

    // (h) server update on the refreshed batch.
    Matrix mid(b, e);
    for (std::size_t k = 0; k < mid.data().size(); ++k) {
      mid.data()[k] = 0.5 * (h_plus.data()[k] + h_minus.data()[k]);
    }
    const Matrix concat_mid = server_.cache.ConcatBatch(ids, m, &mid);
    const double train_loss = MeanHeadLoss(server_.head, concat_mid, labels);
    UpdateServer(concat_mid, labels);

    // (i) cache refresh with the midpoint and (j) clocks.
    const int64_t now = server_.clock + 1;
    for (std::size_t k = 0; k < b; ++k) server_.cache.Store(m, ids[k], mid.row(k), now);
    server_.clock = now;
    dev.local_round = now;
    server_.ledger.Charge(entry);

    RoundRecord rec;
    rec.round = now;
    rec.device = static_cast<int32_t>(m);
    rec.ids = ids;
    rec.perturb_seed = record.seed;
    rec.feedback = fb.delta;
    rec.noise = fb.noise;
    rec.clipped_mean = fb.clipped_mean;
    rec.clipped_count = fb.clipped_count;
    rec.train_loss = train_loss;
    rec.uplink_bytes = entry.uplink_bytes();
    rec.downlink_bytes = entry.downlink_bytes;
    rec.downlink_scalars = 1;
    rec.max_staleness = CurrentMaxStaleness();
    return rec;
  }

  /// One round of the first-order baseline that privatises the forward
  /// embeddings: norm-clip each embedding to C, add per-coordinate Gaussian
  /// noise, and return the embedding gradient to the device.
  RoundRecord BaselineFoRound(std::size_t m) {
    DPZV_ENFORCE(warmed_up_, ErrorCode::kProtocolState, "round before warmup");
    DPZV_ENFORCE(m < devices_.size(), ErrorCode::kValidation, "unknown device id");
    auto& dev = devices_[m];
    const std::size_t b = cfg_.batch_size;
    const std::size_t e = dev.spec.embed_dim;

    const auto ids = SampleBatchIds(train_->size(), b, dev.stream);
    const Matrix x = GatherRows(train_->features[m], ids);
    Matrix h = ForwardEmbedding(dev.model, x);
    for (std::size_t k = 0; k < b; ++k) {
      auto row = h.row(k);
      double norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > cfg_.clip_c) {
        for (auto& v : row) v *= cfg_.clip_c / norm;
      }
      for (auto& v : row) v += SampleGaussian(injected_sigma_, dev.stream);
    }
    LedgerEntry entry{server_.clock + 1, static_cast<int32_t>(m),
                      static_cast<uint64_t>(b) * e * cfg_.scalar_width,
                      static_cast<uint64_t>(b) * cfg_.id_width,
                      static_cast<uint64_t>(b) * e * cfg_.scalar_width};

    std::vector<int32_t> labels;
    labels.reserve(b);
    for (uint32_t id : ids) labels.push_back(train_->labels[id]);
    const Matrix concat = server_.cache.ConcatBatch(ids, m, &h);
    const HeadBackwardResult back = HeadBackward(server_.head, concat, labels, true);

    std::size_t offset = 0;
    for (std::size_t k = 0; k < m; ++k) offset += devices_[k].spec.embed_dim;
    Matrix grad_embed(b, e);
    for (std::size_t k = 0; k < b; ++k) {
      for (std::size_t j = 0; j < e; ++j) grad_embed(k, j) = back.input_grad(k, offset + j);
    }
    // Device chain rule; clipping is treated as identity in the backward pass.
    const auto grad_w = DeviceParamGradient(dev.model, x, grad_embed);
    auto w = dev.model.params().values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<Scalar>(static_cast<double>(w[i]) - dev.spec.eta * grad_w[i]);
    }
    auto w0 = server_.head.params().values();
    for (std::size_t i = 0; i < w0.size(); ++i) {
      w0[i] = static_cast<Scalar>(static_cast<double>(w0[i]) - cfg_.eta0 * back.param_grad[i]);
    }

    const int64_t now = server_.clock + 1;
    for (std::size_t k = 0; k < b; ++k) server_.cache.Store(m, ids[k], h.row(k), now);
    server_.clock = now;
    dev.local_round = now;
    server_.ledger.Charge(entry);

    RoundRecord rec;
    rec.round = now;
    rec.device = static_cast<int32_t>(m);
    rec.ids = ids;
    rec.train_loss = back.mean_loss;
    rec.uplink_bytes = entry.uplink_bytes();
    rec.downlink_bytes = entry.downlink_bytes;
    rec.downlink_scalars = static_cast<uint64_t>(b) * e;
    rec.max_staleness = CurrentMaxStaleness();
    return rec;
  }

  /// Schedules a device and runs the configured algorithm's round.
  RoundRecord Step() {
    const std::size_t m = ScheduleNextDevice();
    return cfg_.algorithm == Algorithm::kFoForwardNoise ? BaselineFoRound(m) : Round(m);
  }

  /// max over devices of (t - t_m): rounds since each device's cache block
  /// was last refreshed.
  int64_t CurrentMaxStaleness() const {
    int64_t worst = 0;
    for (const auto& d : devices_) worst = std::max(worst, server_.clock - d.local_round);
    return worst;
  }

  /// Accuracy on the evaluation set with fresh (noise-free) embeddings.
  double EvaluateAccuracy() const {
    const auto pred = HeadPredict(server_.head, FreshConcat(*eval_));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == eval_->labels[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
  }

  /// Mean training loss with fresh embeddings.
  double FullTrainLoss() const {
    return MeanHeadLoss(server_.head, FreshConcat(*train_), train_->labels);
  }

  /// Accountant's epsilon after `round` releases at the configured delta.
  double RealizedEpsilon(int64_t round) const {
    if (round <= 0) return 0.0;
    if (!accountable_ || injected_sigma_ <= 0.0) {
      return std::numeric_limits<double>::infinity();
    }
    return SolveEpsilon(Compose(step_mu_, round), cfg_.delta);
  }

  MetricsTrace Run() {
    MetricsTrace trace;
    Warmup();
    MetricsRow warm;
    warm.round = 0;
    warm.device = -1;
    warm.train_loss = FullTrainLoss();
    warm.eval_acc = EvaluateAccuracy();
    warm.uplink_bytes = server_.ledger.Total();
    warm.cum_bytes = server_.ledger.Total();
    trace.rows.push_back(warm);
    int64_t max_stale = 0;
    for (int64_t r = 1; r <= cfg_.rounds; ++r) {
      const RoundRecord rec = Step();
      max_stale = std::max(max_stale, rec.max_staleness);
      MetricsRow row;
      row.round = rec.round;
      row.device = rec.device;
      row.train_loss = rec.train_loss;
      if (r % cfg_.eval_every == 0 || r == cfg_.rounds) row.eval_acc = EvaluateAccuracy();
      row.uplink_bytes = rec.uplink_bytes;
      row.downlink_bytes = rec.downlink_bytes;
      row.cum_bytes = server_.ledger.Total();
      row.max_staleness = max_stale;
      row.realized_epsilon = RealizedEpsilon(rec.round);
      trace.rows.push_back(row);
    }
    return trace;
  }

 private:
  static ServerHead<Scalar> MakeHead(const RunConfig& cfg, const VerticalDataset& train) {
    std::size_t concat = 0;
    for (const auto& d : cfg.devices) concat += d.embed_dim;
    return ServerHead<Scalar>(std::max<std::size_t>(concat, 1), std::max<std::size_t>(cfg.head_hidden, 1),
                              std::max<std::size_t>(train.num_classes, 1));
  }

  PrivacySpec ResolvePrivacy() {
    const auto d = static_cast<int64_t>(train_->size());
    const auto b = static_cast<int64_t>(cfg_.batch_size);
    const bool fo = cfg_.algorithm == Algorithm::kFoForwardNoise;
    PrivacySpec spec;
    if (cfg_.sigma_dp) {
      spec = PrivacySpec::FromSigma(fo ? 0.0 : *cfg_.sigma_dp, cfg_.delta, cfg_.rounds,
                                    d, b, cfg_.clip_c);
      injected_sigma_ = *cfg_.sigma_dp;
      if (fo && injected_sigma_ > 0.0 && cfg_.rounds > 0) {
        spec.sigma_dp = injected_sigma_;
        spec.mu = Compose(EmbeddingReleaseMu(cfg_.clip_c, b, d, injected_sigma_), cfg_.rounds);
        spec.epsilon = SolveEpsilon(spec.mu, cfg_.delta);
      }
    } else {
      const double eps = cfg_.epsilon.value_or(std::numeric_limits<double>::infinity());
      spec = PrivacySpec::Calibrate(eps, cfg_.delta, cfg_.rounds, d, b, cfg_.clip_c);
      injected_sigma_ = spec.sigma_dp;
      if (fo && spec.is_private()) {
        injected_sigma_ = EmbeddingNoiseScale(cfg_.clip_c, cfg_.rounds, d, b, spec.mu);
        spec.sigma_dp = injected_sigma_;
      }
    }
    if (cfg_.algorithm == Algorithm::kDpzvNoNoise) injected_sigma_ = 0.0;
    accountable_ = cfg_.algorithm == Algorithm::kDpzv ||
                   cfg_.algorithm == Algorithm::kFoForwardNoise;
    if (accountable_ && injected_sigma_ > 0.0) {
      step_mu_ = fo ? EmbeddingReleaseMu(cfg_.clip_c, b, d, injected_sigma_)
                    : PerStepMu(cfg_.clip_c, b, d, injected_sigma_);
    }
    return spec;
  }

  ZoConfig DeviceZoConfig(const DeviceSpec& spec) const {
    ZoConfig zo;
    zo.lambda = spec.lambda;
    zo.divisor_mode = cfg_.divisor_mode;
    zo.clip_c = cfg_.algorithm == Algorithm::kDpzvNoClip
                    ? std::numeric_limits<double>::infinity()
                    : cfg_.clip_c;
    zo.sigma_dp = injected_sigma_;
    return zo;
  }

  void UpdateServer(const Matrix& batch, std::span<const int32_t> labels) {
    if (cfg_.server_mode == ServerMode::kSgd) {
      ServerFoStep(server_.head, batch, labels, cfg_.eta0);
    } else {
      ZoConfig zo;
      zo.lambda = cfg_.lambda0;
      ServerZoStep(server_.head, batch, labels, zo, cfg_.eta0, server_.stream);
    }
  }

  Matrix FreshConcat(const VerticalDataset& ds) const {
    std::vector<Matrix> blocks;
    std::size_t concat = 0;
    for (std::size_t m = 0; m < devices_.size(); ++m) {
      blocks.push_back(ForwardEmbedding(devices_[m].model, ds.features[m]));
      concat += blocks.back().cols();
    }
    Matrix out(ds.size(), concat);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto dst = out.row(i).begin();
      for (const auto& blk : blocks) {
        auto src = blk.row(i);
        dst = std::copy(src.begin(), src.end(), dst);
      }
    }
    return out;
  }

  RunConfig cfg_;
  const VerticalDataset* train_;
  const VerticalDataset* eval_;
  ServerState<Scalar> server_;
  std::vector<DeviceState<Scalar>> devices_;
  bool warmed_up_ = false;
  double injected_sigma_ = 0.0;
  double step_mu_ = 0.0;
  bool accountable_ = false;
};

template <class Scalar = float>
MetricsTrace RunTraining(const RunConfig& cfg, const VerticalDataset& train,
                         const VerticalDataset* eval = nullptr) {
  Simulation<Scalar> sim(cfg, train, eval);
  return sim.Run();
}

}  // namespace dpzv

#endif  // DPZV_PROTOCOL_HPP_
