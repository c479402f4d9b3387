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

// Checkpoint file layout (all integers and reals little-endian):
//
//   offset  size  field
//   0       8     magic "DPZVCKPT"
//   8       4     u32 format version (1)
//   12      4     u32 model count N
//   then N model blocks:
//     4     u32 model kind (0 linear, 1 mlp1, 2 server_head)
//     4     u32 scalar width in bytes (4 = IEEE binary32, 8 = binary64)
//     4     u32 layer count L
//     8*L   per layer: u32 in, u32 out
//     8     u64 parameter count P (must equal sum of in*out+out)
//     w*P   parameter values
//
// Block order in a training checkpoint: server head first, then devices
// 0..M-1.

#ifndef DPZV_CHECKPOINT_HPP_
#define DPZV_CHECKPOINT_HPP_

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "dpzv/model.hpp"

namespace dpzv {

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'Z', 'V',
                                             'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace internal {

template <class T>
void WriteLe(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class LeReader {
 public:
  explicit LeReader(const std::string& data) : data_(data) {}

  template <class T>
  T Read() {
    DPZV_ENFORCE(pos_ + sizeof(T) <= data_.size(), ErrorCode::kFormat,
                 "checkpoint truncated at byte " + std::to_string(pos_));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bytes, bytes + sizeof(T));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }

  bool AtEnd() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace internal

template <class Scalar>
void AppendModelBlock(std::string& out, const FlatParams<Scalar>& params) {
  internal::WriteLe<uint32_t>(out, static_cast<uint32_t>(params.kind()));
  internal::WriteLe<uint32_t>(out, sizeof(Scalar));
  internal::WriteLe<uint32_t>(out, static_cast<uint32_t>(params.layers().size()));
  for (const auto& l : params.layers()) {
    internal::WriteLe<uint32_t>(out, l.in);
    internal::WriteLe<uint32_t>(out, l.out);
  }
  internal::WriteLe<uint64_t>(out, params.size());
  for (Scalar v : params.values()) internal::WriteLe<Scalar>(out, v);
}

template <class Scalar>
std::string EncodeCheckpoint(const std::vector<const FlatParams<Scalar>*>& models) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  internal::WriteLe<uint32_t>(out, kCheckpointVersion);
  internal::WriteLe<uint32_t>(out, static_cast<uint32_t>(models.size()));
  for (const auto* m : models) AppendModelBlock(out, *m);
  return out;
}

/// Decodes a checkpoint. Values stored at the other width are converted.
template <class Scalar>
std::vector<FlatParams<Scalar>> DecodeCheckpoint(const std::string& data) {
  DPZV_ENFORCE(data.size() >= 16 &&
                   std::memcmp(data.data(), kCheckpointMagic, 8) == 0,
               ErrorCode::kFormat, "not a dpzv checkpoint (bad magic)");
  internal::LeReader reader(data);
  reader.Read<uint64_t>();
  const auto version = reader.Read<uint32_t>();
  DPZV_ENFORCE(version == kCheckpointVersion, ErrorCode::kFormat,
               "unsupported checkpoint version " + std::to_string(version));
  const auto count = reader.Read<uint32_t>();
  std::vector<FlatParams<Scalar>> models;
  for (uint32_t k = 0; k < count; ++k) {
    const auto kind = reader.Read<uint32_t>();
    const auto width = reader.Read<uint32_t>();
    const auto n_layers = reader.Read<uint32_t>();
    DPZV_ENFORCE(kind <= 2 && (width == 4 || width == 8) && n_layers <= 16,
                 ErrorCode::kFormat, "corrupt checkpoint model header");
    std::vector<LayerShape> layers(n_layers);
    std::size_t expected = 0;
    for (auto& l : layers) {
      l.in = reader.Read<uint32_t>();
      l.out = reader.Read<uint32_t>();
      expected += l.ParamCount();
    }
    const auto n = reader.Read<uint64_t>();
    DPZV_ENFORCE(n == expected, ErrorCode::kFormat,
                 "checkpoint parameter count does not match shape header");
    FlatParams<Scalar> params(static_cast<ModelKind>(kind), layers);
    auto v = params.values();
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = width == 4 ? static_cast<Scalar>(reader.Read<float>())
                        : static_cast<Scalar>(reader.Read<double>());
    }
    models.push_back(std::move(params));
  }
  DPZV_ENFORCE(reader.AtEnd(), ErrorCode::kFormat,
               "trailing bytes after last checkpoint block");
  return models;
}

inline void WriteFileBytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  DPZV_ENFORCE(f.good(), ErrorCode::kIo, "cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  DPZV_ENFORCE(f.good(), ErrorCode::kIo, "write failed: " + path);
}

inline std::string ReadFileBytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  DPZV_ENFORCE(f.good(), ErrorCode::kIo, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace dpzv

#endif  // DPZV_CHECKPOINT_HPP_
