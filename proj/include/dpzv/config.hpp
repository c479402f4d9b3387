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

// YAML experiment configuration. Requires yaml-cpp.
//
// Every key is optional; omitted keys take the defaults below. Unknown keys
// are rejected with the file position of the offending key.
//
//   algorithm: dpzv            # dpzv | dpzv_no_clip | dpzv_no_noise | fo_forward_noise
//   server_mode: sgd           # sgd | zo
//   rounds: 1000
//   batch_size: 32
//   seed: 1
//   seeds: []                  # repeat seeds; overrides `seed` when non-empty
//   eval_every: 100
//   target_accuracy: 0.9
//   scalar_width: 4            # 4 = float32 parameters and payloads, 8 = float64
//   id_width: 4
//   output_dir: out
//   server: {hidden: 16, eta: 0.05, lambda: 0.001}
//   privacy: {epsilon: inf, delta: 0.001, clip: 1.0, divisor: two_lambda}
//            # or sigma_dp: <real> instead of epsilon
//   scheduler: {fairness_cap: true, tau: 20}   # tau defaults to 10 * devices
//   devices:                   # either a list of per-device maps ...
//     - {model: linear, embed_dim: 4, hidden: 8, eta: 0.05, lambda: 0.001, participation: 1.0}
//   devices:                   # ... or shared settings with a count
//     {count: 2, model: linear, embed_dim: 4}
//   data:
//     source: synthetic        # synthetic | idx | csv
//     num_samples: 2000        # synthetic
//     total_dim: 20
//     num_classes: 2
//     margin: 10.0
//     seed: 7
//     images: ...  labels: ... # idx
//     path: ...                # csv
//     scheme: cols             # cols | rows
//     row_width: 28            # rows scheme only
//     limit: 0                 # keep only the first N samples (0 = all)
//     holdout: 0               # last N samples form the evaluation set

#ifndef DPZV_CONFIG_HPP_
#define DPZV_CONFIG_HPP_

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dpzv/common.hpp"
#include "dpzv/data.hpp"
#include "dpzv/protocol.hpp"

namespace dpzv {

struct DataSpec {
  std::string source = "synthetic";
  std::size_t num_samples = 2000;
  std::size_t total_dim = 20;
  std::size_t num_classes = 2;
  double margin = 10.0;
  uint64_t seed = 7;
  std::string images;
  std::string labels;
  std::string path;
  PartitionScheme scheme = PartitionScheme::kContiguousCols;
  std::size_t row_width = 28;
  std::size_t limit = 0;
  std::size_t holdout = 0;
};

struct ExperimentConfig {
  RunConfig run;
  DataSpec data;
  std::string output_dir = "out";
  std::vector<uint64_t> seeds;
  double target_accuracy = 0.9;
  std::string source_name = "<config>";

  /// Seeds actually run: `seeds` if given, else the single `run.seed`.
  std::vector<uint64_t> RunSeeds() const {
    return seeds.empty() ? std::vector<uint64_t>{run.seed} : seeds;
  }
};

namespace internal {

inline std::string Where(const std::string& source, const YAML::Mark& mark) {
  if (mark.is_null()) return source;
  return source + ":" + std::to_string(mark.line + 1) + ":" +
         std::to_string(mark.column + 1);
}

[[noreturn]] inline void ConfigFail(const std::string& source, const YAML::Node& node,
                                    const std::string& msg) {
  throw Error(ErrorCode::kConfiguration, Where(source, node.Mark()) + ": " + msg);
}

class MapReader {
 public:
  MapReader(const YAML::Node& node, std::string source, std::string section)
      : node_(node), source_(std::move(source)), section_(std::move(section)) {
    if (!node_.IsMap()) ConfigFail(source_, node_, section_ + " must be a mapping");
  }

  bool Has(const std::string& key) {
    seen_.insert(key);
    return static_cast<bool>(node_[key]);
  }

  YAML::Node Get(const std::string& key) {
    seen_.insert(key);
    return node_[key];
  }

  template <class T>
  void Read(const std::string& key, T& out) {
    const YAML::Node n = Get(key);
    if (n) out = Convert<T>(n, key);
  }

  template <class T>
  void ReadOptional(const std::string& key, std::optional<T>& out) {
    const YAML::Node n = Get(key);
    if (n && !n.IsNull()) out = Convert<T>(n, key);
  }

  template <class T>
  T Convert(const YAML::Node& n, const std::string& key) {
    if (!n.IsScalar()) ConfigFail(source_, n, "'" + key + "' must be a scalar");
    if constexpr (std::is_same_v<T, double>) {
      const std::string s = n.Scalar();
      if (s == "inf" || s == ".inf" || s == "+inf" || s == "Infinity") {
        return std::numeric_limits<double>::infinity();
      }
    }
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!n.Scalar().empty() && n.Scalar()[0] == '-') {
        ConfigFail(source_, n, "'" + key + "' must be non-negative");
      }
    }
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      ConfigFail(source_, n, "'" + key + "' has invalid value '" + n.Scalar() + "'");
    }
  }

  /// Rejects keys that were never asked for.
  void Finish() {
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) {
        ConfigFail(source_, kv.first, "unknown key '" + key + "' in " + section_);
      }
    }
  }

  const std::string& source() const { return source_; }

 private:
  YAML::Node node_;
  std::string source_;
  std::string section_;
  std::set<std::string> seen_;
};

inline Algorithm ParseAlgorithm(MapReader& r, const YAML::Node& n) {
  const auto s = r.Convert<std::string>(n, "algorithm");
  if (s == "dpzv") return Algorithm::kDpzv;
  if (s == "dpzv_no_clip") return Algorithm::kDpzvNoClip;
  if (s == "dpzv_no_noise") return Algorithm::kDpzvNoNoise;
  if (s == "fo_forward_noise") return Algorithm::kFoForwardNoise;
  ConfigFail(r.source(), n, "unknown algorithm '" + s + "'");
}

inline void ReadDevice(const YAML::Node& node, const std::string& source,
                       const std::string& section, DeviceSpec& d,
                       std::optional<std::size_t>* count) {
  MapReader r(node, source, section);
  if (count) r.ReadOptional("count", *count);
  if (const auto n = r.Get("model")) {
    const auto s = r.Convert<std::string>(n, "model");
    if (s == "linear") {
      d.kind = ModelKind::kLinear;
    } else if (s == "mlp1") {
      d.kind = ModelKind::kMlp1;
    } else {
      ConfigFail(source, n, "unknown device model '" + s + "' (linear | mlp1)");
    }
  }
  r.Read("embed_dim", d.embed_dim);
  r.Read("hidden", d.hidden_dim);
  r.Read("eta", d.eta);
  r.Read("lambda", d.lambda);
  r.Read("participation", d.participation);
  r.Finish();
}

}  // namespace internal

/// Parses a YAML document. `source` names the document in error messages.
inline ExperimentConfig ParseConfig(const std::string& text,
                                    const std::string& source = "<config>") {
  using internal::ConfigFail;
  using internal::MapReader;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::kConfiguration,
                internal::Where(source, e.mark) + ": YAML syntax error: " + e.msg);
  }
  ExperimentConfig cfg;
  cfg.source_name = source;
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  MapReader r(root, source, "top level");
  RunConfig& run = cfg.run;

  if (const auto n = r.Get("algorithm")) run.algorithm = internal::ParseAlgorithm(r, n);
  if (const auto n = r.Get("server_mode")) {
    const auto s = r.Convert<std::string>(n, "server_mode");
    if (s == "sgd") {
      run.server_mode = ServerMode::kSgd;
    } else if (s == "zo") {
      run.server_mode = ServerMode::kZo;
    } else {
      ConfigFail(source, n, "unknown server_mode '" + s + "' (sgd | zo)");
    }
  }
  r.Read("rounds", run.rounds);
  r.Read("batch_size", run.batch_size);
  r.Read("seed", run.seed);
  if (const auto n = r.Get("seeds")) {
    if (!n.IsSequence()) ConfigFail(source, n, "'seeds' must be a list");
    for (const auto& s : n) cfg.seeds.push_back(r.Convert<uint64_t>(s, "seeds"));
  }
  r.Read("eval_every", run.eval_every);
  r.Read("target_accuracy", cfg.target_accuracy);
  r.Read("scalar_width", run.scalar_width);
  r.Read("id_width", run.id_width);
  r.Read("output_dir", cfg.output_dir);

  if (const auto n = r.Get("server")) {
    MapReader s(n, source, "server");
    s.Read("hidden", run.head_hidden);
    s.Read("eta", run.eta0);
    s.Read("lambda", run.lambda0);
    s.Finish();
  }
  if (const auto n = r.Get("privacy")) {
    MapReader p(n, source, "privacy");
    p.ReadOptional("epsilon", run.epsilon);
    p.Read("delta", run.delta);
    p.ReadOptional("sigma_dp", run.sigma_dp);
    p.Read("clip", run.clip_c);
    if (const auto d = p.Get("divisor")) {
      const auto s = p.Convert<std::string>(d, "divisor");
      if (s == "two_lambda") {
        run.divisor_mode = DivisorMode::kTwoLambda;
      } else if (s == "one_lambda") {
        run.divisor_mode = DivisorMode::kOneLambda;
      } else {
        ConfigFail(source, d, "unknown divisor '" + s + "' (two_lambda | one_lambda)");
      }
    }
    if (run.epsilon && run.sigma_dp) {
      ConfigFail(source, n, "specify either epsilon/delta or sigma_dp, not both");
    }
    p.Finish();
  }
  if (const auto n = r.Get("scheduler")) {
    MapReader s(n, source, "scheduler");
    s.Read("fairness_cap", run.fairness_cap);
    s.ReadOptional("tau", run.tau);
    s.Finish();
  }

  const YAML::Node devices = r.Get("devices");
  if (!devices) {
    run.devices.assign(2, DeviceSpec{});
  } else if (devices.IsSequence()) {
    for (std::size_t k = 0; k < devices.size(); ++k) {
      DeviceSpec d;
      internal::ReadDevice(devices[k], source, "devices[" + std::to_string(k) + "]", d,
                           nullptr);
      run.devices.push_back(d);
    }
    if (run.devices.empty()) ConfigFail(source, devices, "'devices' list is empty");
  } else {
    DeviceSpec d;
    std::optional<std::size_t> count;
    internal::ReadDevice(devices, source, "devices", d, &count);
    if (count.value_or(2) < 1) ConfigFail(source, devices, "device count must be >= 1");
    run.devices.assign(count.value_or(2), d);
  }

  if (const auto n = r.Get("data")) {
    MapReader d(n, source, "data");
    DataSpec& ds = cfg.data;
    if (const auto s = d.Get("source")) {
      ds.source = d.Convert<std::string>(s, "source");
      if (ds.source != "synthetic" && ds.source != "idx" && ds.source != "csv") {
        ConfigFail(source, s, "unknown data source '" + ds.source + "' (synthetic | idx | csv)");
      }
    }
    d.Read("num_samples", ds.num_samples);
    d.Read("total_dim", ds.total_dim);
    d.Read("num_classes", ds.num_classes);
    d.Read("margin", ds.margin);
    d.Read("seed", ds.seed);
    d.Read("images", ds.images);
    d.Read("labels", ds.labels);
    d.Read("path", ds.path);
    if (const auto s = d.Get("scheme")) {
      const auto v = d.Convert<std::string>(s, "scheme");
      if (v == "cols") {
        ds.scheme = PartitionScheme::kContiguousCols;
      } else if (v == "rows") {
        ds.scheme = PartitionScheme::kContiguousRows;
      } else {
        ConfigFail(source, s, "unknown partition scheme '" + v + "' (cols | rows)");
      }
    }
    d.Read("row_width", ds.row_width);
    d.Read("limit", ds.limit);
    d.Read("holdout", ds.holdout);
    if (ds.source == "idx" && (ds.images.empty() || ds.labels.empty())) {
      ConfigFail(source, n, "idx data needs 'images' and 'labels'");
    }
    if (ds.source == "csv" && ds.path.empty()) {
      ConfigFail(source, n, "csv data needs 'path'");
    }
    d.Finish();
  }
  r.Finish();

  try {
    run.Validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfiguration, source + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig LoadConfigFile(const std::string& path) {
  std::ifstream f(path);
  DPZV_ENFORCE(f.good(), ErrorCode::kConfiguration, "cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ParseConfig(ss.str(), path);
}

/// Every effective setting, in a form ParseConfig accepts back.
inline std::string ResolvedConfigYaml(const ExperimentConfig& cfg) {
  const RunConfig& run = cfg.run;
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto real = [](double v) -> std::string {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round trip
    return std::string(buf, res.ptr);
  };
  out << YAML::BeginMap;
  out << YAML::Key << "algorithm" << YAML::Value << AlgorithmName(run.algorithm);
  out << YAML::Key << "server_mode" << YAML::Value << ServerModeName(run.server_mode);
  out << YAML::Key << "rounds" << YAML::Value << run.rounds;
  out << YAML::Key << "batch_size" << YAML::Value << run.batch_size;
  out << YAML::Key << "seed" << YAML::Value << run.seed;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << cfg.seeds;
  out << YAML::Key << "eval_every" << YAML::Value << run.eval_every;
  out << YAML::Key << "target_accuracy" << YAML::Value << real(cfg.target_accuracy);
  out << YAML::Key << "scalar_width" << YAML::Value << run.scalar_width;
  out << YAML::Key << "id_width" << YAML::Value << run.id_width;
  out << YAML::Key << "output_dir" << YAML::Value << cfg.output_dir;

  out << YAML::Key << "server" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "hidden" << YAML::Value << run.head_hidden;
  out << YAML::Key << "eta" << YAML::Value << real(run.eta0);
  out << YAML::Key << "lambda" << YAML::Value << real(run.lambda0);
  out << YAML::EndMap;

  out << YAML::Key << "privacy" << YAML::Value << YAML::BeginMap;
  if (run.sigma_dp) {
    out << YAML::Key << "sigma_dp" << YAML::Value << real(*run.sigma_dp);
  } else {
    out << YAML::Key << "epsilon" << YAML::Value
        << real(run.epsilon.value_or(std::numeric_limits<double>::infinity()));
  }
  out << YAML::Key << "delta" << YAML::Value << real(run.delta);
  out << YAML::Key << "clip" << YAML::Value << real(run.clip_c);
  out << YAML::Key << "divisor" << YAML::Value
      << (run.divisor_mode == DivisorMode::kTwoLambda ? "two_lambda" : "one_lambda");
  out << YAML::EndMap;

  out << YAML::Key << "scheduler" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "fairness_cap" << YAML::Value << run.fairness_cap;
  out << YAML::Key << "tau" << YAML::Value << run.EffectiveTau();
  out << YAML::EndMap;

  out << YAML::Key << "devices" << YAML::Value << YAML::BeginSeq;
  for (const auto& d : run.devices) {
    out << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "model" << YAML::Value << ModelKindName(d.kind);
    out << YAML::Key << "embed_dim" << YAML::Value << d.embed_dim;
    out << YAML::Key << "hidden" << YAML::Value << d.hidden_dim;
    out << YAML::Key << "eta" << YAML::Value << real(d.eta);
    out << YAML::Key << "lambda" << YAML::Value << real(d.lambda);
    out << YAML::Key << "participation" << YAML::Value << real(d.participation);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  const DataSpec& ds = cfg.data;
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "source" << YAML::Value << ds.source;
  if (ds.source == "synthetic") {
    out << YAML::Key << "num_samples" << YAML::Value << ds.num_samples;
    out << YAML::Key << "total_dim" << YAML::Value << ds.total_dim;
    out << YAML::Key << "num_classes" << YAML::Value << ds.num_classes;
    out << YAML::Key << "margin" << YAML::Value << real(ds.margin);
    out << YAML::Key << "seed" << YAML::Value << ds.seed;
  } else if (ds.source == "idx") {
    out << YAML::Key << "images" << YAML::Value << ds.images;
    out << YAML::Key << "labels" << YAML::Value << ds.labels;
  } else {
    out << YAML::Key << "path" << YAML::Value << ds.path;
  }
  out << YAML::Key << "scheme" << YAML::Value
      << (ds.scheme == PartitionScheme::kContiguousCols ? "cols" : "rows");
  out << YAML::Key << "row_width" << YAML::Value << ds.row_width;
  out << YAML::Key << "limit" << YAML::Value << ds.limit;
  out << YAML::Key << "holdout" << YAML::Value << ds.holdout;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

/// Training and evaluation sets described by `spec` for `num_devices`
/// devices. Without a holdout the evaluation set is the training set.
struct LoadedData {
  VerticalDataset train;
  std::optional<VerticalDataset> eval;

  const VerticalDataset* eval_ptr() const { return eval ? &*eval : nullptr; }
};

inline LoadedData LoadData(const DataSpec& spec, std::size_t num_devices) {
  VerticalDataset all;
  if (spec.source == "synthetic") {
    all = MakeSynthetic(spec.num_samples, spec.total_dim, num_devices, spec.num_classes,
                        spec.margin, spec.seed);
  } else {
    RawDataset raw = spec.source == "idx" ? LoadIdx(spec.images, spec.labels)
                                          : LoadCsv(spec.path);
    if (spec.limit > 0 && spec.limit < raw.labels.size()) {
      std::vector<uint32_t> keep(spec.limit);
      for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = static_cast<uint32_t>(i);
      raw.features = GatherRows(raw.features, keep);
      raw.labels.resize(spec.limit);
    }
    if (spec.source == "csv") StandardizeColumns(raw.features);
    all = MakeVertical(std::move(raw), num_devices, spec.scheme, spec.row_width);
  }
  LoadedData out;
  if (spec.holdout == 0) {
    out.train = std::move(all);
  } else {
    DPZV_ENFORCE(spec.holdout < all.size(), ErrorCode::kConfiguration,
                 "holdout must be smaller than the dataset");
    auto [train, eval] = SplitRows(all, all.size() - spec.holdout);
    out.train = std::move(train);
    out.eval = std::move(eval);
  }
  return out;
}

}  // namespace dpzv

#endif  // DPZV_CONFIG_HPP_
