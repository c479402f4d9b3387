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

#ifndef DPZV_DATA_HPP_
#define DPZV_DATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dpzv/common.hpp"
#include "dpzv/numerics.hpp"

namespace dpzv {

/// Features split by column across M devices; labels stay with the server.
/// Row i of every device block is sample id i.
struct VerticalDataset {
  std::vector<Matrix> features;
  std::vector<int32_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t num_devices() const { return features.size(); }
  std::size_t input_dim(std::size_t m) const { return features[m].cols(); }

  void Validate() const {
    DPZV_ENFORCE(!features.empty(), ErrorCode::kValidation,
                 "dataset has no device partitions");
    for (const auto& x : features) {
      DPZV_ENFORCE(x.rows() == labels.size(), ErrorCode::kValidation,
                   "device feature rows do not match label count");
      DPZV_ENFORCE(x.cols() > 0, ErrorCode::kValidation,
                   "device partition has no features");
    }
    for (int32_t y : labels) {
      DPZV_ENFORCE(y >= 0 && static_cast<std::size_t>(y) < num_classes,
                   ErrorCode::kValidation, "label outside [0, num_classes)");
    }
  }
};

enum class PartitionScheme {
  kContiguousCols,  // split individual feature columns
  kContiguousRows,  // split image rows of width `row_width`
};

/// Sizes of M contiguous blocks of n units; sizes differ by at most one and
/// the larger blocks come first.
inline std::vector<std::size_t> PartitionSizes(std::size_t n, std::size_t m) {
  DPZV_ENFORCE(m >= 1, ErrorCode::kValidation, "need at least one device");
  DPZV_ENFORCE(m <= n, ErrorCode::kValidation,
               "cannot split " + std::to_string(n) + " units across " +
                   std::to_string(m) + " devices");
  std::vector<std::size_t> sizes(m, n / m);
  for (std::size_t i = 0; i < n % m; ++i) ++sizes[i];
  return sizes;
}

inline std::vector<Matrix> PartitionFeatures(const Matrix& features, std::size_t m,
                                             PartitionScheme scheme,
                                             std::size_t row_width = 0) {
  std::size_t unit = 1;
  if (scheme == PartitionScheme::kContiguousRows) {
    DPZV_ENFORCE(row_width > 0 && features.cols() % row_width == 0,
                 ErrorCode::kValidation,
                 "row partition needs a row width dividing the feature count");
    unit = row_width;
  }
  const auto sizes = PartitionSizes(features.cols() / unit, m);
  std::vector<Matrix> out;
  std::size_t col = 0;
  for (std::size_t s : sizes) {
    const std::size_t width = s * unit;
    Matrix block(features.rows(), width);
    for (std::size_t r = 0; r < features.rows(); ++r) {
      auto src = features.row(r).subspan(col, width);
      std::copy(src.begin(), src.end(), block.row(r).begin());
    }
    out.push_back(std::move(block));
    col += width;
  }
  return out;
}

/// Zero mean, unit variance per column (constant columns are only centred).
inline void StandardizeColumns(Matrix& x) {
  if (x.rows() == 0) return;
  const double n = static_cast<double>(x.rows());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, c);
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double d = x(r, c) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      x(r, c) = sd > 0.0 ? (x(r, c) - mean) / sd : x(r, c) - mean;
    }
  }
}

/// Gaussian class-conditional data: class means are orthogonal vectors whose
/// pairwise distance is `margin`, noise is N(0, I). Labels are assigned
/// round-robin, columns are standardised, and the columns are split
/// contiguously across `num_devices`.
inline VerticalDataset MakeSynthetic(std::size_t num_samples, std::size_t total_dim,
                                     std::size_t num_devices,
                                     std::size_t num_classes, double margin,
                                     uint64_t seed) {
  DPZV_ENFORCE(num_classes >= 1 && num_samples >= num_classes,
               ErrorCode::kValidation, "need D >= num_classes >= 1");
  DPZV_ENFORCE(num_classes <= total_dim, ErrorCode::kValidation,
               "num_classes must not exceed total_dim");
  DPZV_ENFORCE(margin >= 0.0, ErrorCode::kValidation, "margin must be >= 0");
  SeededStream stream(seed);

  // Orthonormal class directions by Gram-Schmidt on Gaussian vectors.
  std::vector<std::vector<double>> means;
  while (means.size() < num_classes) {
    std::vector<double> v(total_dim);
    for (auto& x : v) x = stream.NextNormal();
    for (const auto& q : means) {
      double dot = 0.0;
      for (std::size_t i = 0; i < total_dim; ++i) dot += v[i] * q[i];
      for (std::size_t i = 0; i < total_dim; ++i) v[i] -= dot * q[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    means.push_back(std::move(v));
  }
  const double scale = margin / std::numbers::sqrt2;

  VerticalDataset ds;
  ds.num_classes = num_classes;
  ds.labels.resize(num_samples);
  Matrix x(num_samples, total_dim);
  for (std::size_t r = 0; r < num_samples; ++r) {
    const auto y = static_cast<int32_t>(r % num_classes);
    ds.labels[r] = y;
    for (std::size_t c = 0; c < total_dim; ++c) {
      x(r, c) = scale * means[y][c] + stream.NextNormal();
    }
  }
  StandardizeColumns(x);
  ds.features = PartitionFeatures(x, num_devices, PartitionScheme::kContiguousCols);
  return ds;
}

struct RawDataset {
  Matrix features;
  std::vector<int32_t> labels;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
};

namespace internal {

inline uint32_t ReadBe32(const std::string& bytes, std::size_t pos,
                         const std::string& path) {
  DPZV_ENFORCE(pos + 4 <= bytes.size(), ErrorCode::kFormat,
               path + ": truncated IDX header");
  return (static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos])) << 24) |
         (static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + 1])) << 16) |
         (static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + 2])) << 8) |
         static_cast<uint32_t>(static_cast<unsigned char>(bytes[pos + 3]));
}

inline std::string SlurpFile(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  DPZV_ENFORCE(f.good(), ErrorCode::kIo, "cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace internal

/// Reads an IDX image file (magic 0x00000803, unsigned bytes) and its label
/// file (magic 0x00000801). Pixels are scaled to [0, 1].
inline RawDataset LoadIdx(const std::string& images_path,
                          const std::string& labels_path) {
  const std::string img = internal::SlurpFile(images_path);
  const std::string lab = internal::SlurpFile(labels_path);
  const uint32_t img_magic = internal::ReadBe32(img, 0, images_path);
  DPZV_ENFORCE(img_magic == 0x00000803u, ErrorCode::kFormat,
               images_path + ": bad IDX image magic");
  const uint32_t lab_magic = internal::ReadBe32(lab, 0, labels_path);
  DPZV_ENFORCE(lab_magic == 0x00000801u, ErrorCode::kFormat,
               labels_path + ": bad IDX label magic");
  const uint32_t n_img = internal::ReadBe32(img, 4, images_path);
  const uint32_t rows = internal::ReadBe32(img, 8, images_path);
  const uint32_t cols = internal::ReadBe32(img, 12, images_path);
  const uint32_t n_lab = internal::ReadBe32(lab, 4, labels_path);
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  DPZV_ENFORCE(img.size() == 16 + static_cast<std::size_t>(n_img) * pixels,
               ErrorCode::kFormat, images_path + ": file size does not match header");
  DPZV_ENFORCE(lab.size() == 8 + static_cast<std::size_t>(n_lab),
               ErrorCode::kFormat, labels_path + ": file size does not match header");
  DPZV_ENFORCE(n_img == n_lab, ErrorCode::kConsistency,
               "image count " + std::to_string(n_img) + " != label count " +
                   std::to_string(n_lab));
  RawDataset raw;
  raw.image_rows = rows;
  raw.image_cols = cols;
  raw.features = Matrix(n_img, pixels);
  auto dst = raw.features.data();
  for (std::size_t k = 0; k < dst.size(); ++k) {
    dst[k] = static_cast<unsigned char>(img[16 + k]) / 255.0;
  }
  raw.labels.resize(n_lab);
  for (std::size_t k = 0; k < n_lab; ++k) {
    raw.labels[k] = static_cast<unsigned char>(lab[8 + k]);
  }
  return raw;
}

/// Headerless numeric CSV; the last column is an integer class label.
inline RawDataset LoadCsv(const std::string& path) {
  std::ifstream f(path);
  DPZV_ENFORCE(f.good(), ErrorCode::kIo, "cannot open " + path);
  std::vector<double> values;
  std::vector<int32_t> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw Error(ErrorCode::kFormat, path + ":" + std::to_string(line_no) +
                                            ": non-numeric cell '" + cell + "'");
      }
    }
    DPZV_ENFORCE(row.size() >= 2, ErrorCode::kFormat,
                 path + ":" + std::to_string(line_no) + ": need features and a label");
    if (width == 0) width = row.size();
    DPZV_ENFORCE(row.size() == width, ErrorCode::kFormat,
                 path + ":" + std::to_string(line_no) + ": ragged row");
    const double y = row.back();
    DPZV_ENFORCE(y >= 0.0 && y == std::floor(y), ErrorCode::kFormat,
                 path + ":" + std::to_string(line_no) + ": label must be a non-negative integer");
    labels.push_back(static_cast<int32_t>(y));
    values.insert(values.end(), row.begin(), row.end() - 1);
  }
  DPZV_ENFORCE(!labels.empty(), ErrorCode::kFormat, path + ": no rows");
  RawDataset raw;
  raw.features = Matrix(labels.size(), width - 1, std::move(values));
  raw.labels = std::move(labels);
  return raw;
}

inline VerticalDataset MakeVertical(RawDataset raw, std::size_t num_devices,
                                    PartitionScheme scheme, std::size_t row_width = 0) {
  VerticalDataset ds;
  ds.num_classes =
      static_cast<std::size_t>(*std::max_element(raw.labels.begin(), raw.labels.end())) + 1;
  ds.labels = std::move(raw.labels);
  ds.features = PartitionFeatures(raw.features, num_devices, scheme, row_width);
  ds.Validate();
  return ds;
}

/// B distinct ids drawn uniformly without replacement (sparse partial
/// Fisher-Yates; the result is a uniformly random ordered sample).
inline std::vector<uint32_t> SampleBatchIds(std::size_t dataset_size,
                                            std::size_t batch_size,
                                            SeededStream& stream) {
  DPZV_ENFORCE(batch_size >= 1 && batch_size <= dataset_size,
               ErrorCode::kValidation,
               "batch size " + std::to_string(batch_size) + " outside [1, " +
                   std::to_string(dataset_size) + "]");
  std::unordered_map<std::size_t, std::size_t> swapped;
  auto at = [&](std::size_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  std::vector<uint32_t> ids(batch_size);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const std::size_t j = k + stream.NextIndex(dataset_size - k);
    const std::size_t vj = at(j);
    swapped[j] = at(k);
    ids[k] = static_cast<uint32_t>(vj);
  }
  return ids;
}

/// Rows `ids` of x, in order.
inline Matrix GatherRows(const Matrix& x, std::span<const uint32_t> ids) {
  Matrix out(ids.size(), x.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    DPZV_ENFORCE(ids[k] < x.rows(), ErrorCode::kValidation,
                 "sample id " + std::to_string(ids[k]) + " outside dataset");
    auto src = x.row(ids[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

/// Splits off the last rows as a held-out set: returns {first n_train, rest}.
inline std::pair<VerticalDataset, VerticalDataset> SplitRows(const VerticalDataset& ds,
                                                             std::size_t n_train) {
  DPZV_ENFORCE(n_train >= 1 && n_train < ds.size(), ErrorCode::kValidation,
               "train split must leave at least one row on each side");
  std::vector<uint32_t> head_ids(n_train), tail_ids(ds.size() - n_train);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (i < n_train ? head_ids[i] : tail_ids[i - n_train]) = static_cast<uint32_t>(i);
  }
  auto take = [&](const std::vector<uint32_t>& ids) {
    VerticalDataset out;
    out.num_classes = ds.num_classes;
    for (const auto& x : ds.features) out.features.push_back(GatherRows(x, ids));
    for (uint32_t id : ids) out.labels.push_back(ds.labels[id]);
    return out;
  };
  return {take(head_ids), take(tail_ids)};
}

struct Batch {
  std::vector<uint32_t> ids;
  std::vector<Matrix> blocks;  // one per device, row k <-> ids[k]
  std::vector<int32_t> labels;
};

inline Batch BatchSample(const VerticalDataset& ds, std::size_t batch_size,
                         SeededStream& stream) {
  Batch b;
  b.ids = SampleBatchIds(ds.size(), batch_size, stream);
  for (const auto& x : ds.features) b.blocks.push_back(GatherRows(x, b.ids));
  b.labels.reserve(b.ids.size());
  for (uint32_t id : b.ids) b.labels.push_back(ds.labels[id]);
  return b;
}

}  // namespace dpzv

#endif  // DPZV_DATA_HPP_
