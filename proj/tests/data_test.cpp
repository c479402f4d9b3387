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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "dpzv/data.hpp"

namespace dpzv {
namespace {

void ExpectCode(ErrorCode code, auto&& fn) {
  try {
    fn();
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

Matrix Iota(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.data().size(); ++k) m.data()[k] = static_cast<double>(k);
  return m;
}

Matrix ConcatCols(const std::vector<Matrix>& parts) {
  std::size_t cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Matrix out(parts[0].rows(), cols);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, c0 + c) = p(r, c);
      c0 += p.cols();
    }
  }
  return out;
}

TEST(Partition, Sizes) {
  EXPECT_EQ(PartitionSizes(10, 3), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(PartitionSizes(28, 7), std::vector<std::size_t>(7, 4));
  EXPECT_EQ(PartitionSizes(5, 1), std::vector<std::size_t>{5});
  ExpectCode(ErrorCode::kValidation, [] { PartitionSizes(3, 4); });
}

TEST(Partition, ImageRowsSevenDevices) {
  const Matrix x = Iota(3, 28 * 28);
  const auto parts = PartitionFeatures(x, 7, PartitionScheme::kContiguousRows, 28);
  ASSERT_EQ(parts.size(), 7u);
  for (const auto& p : parts) EXPECT_EQ(p.cols(), 4u * 28);
  EXPECT_EQ(ConcatCols(parts), x);
}

TEST(Partition, RoundTripAndIdentity) {
  for (std::size_t n : {1u, 5u, 10u, 17u}) {
    for (std::size_t m = 1; m <= n; ++m) {
      const Matrix x = Iota(4, n);
      const auto parts = PartitionFeatures(x, m, PartitionScheme::kContiguousCols);
      ASSERT_EQ(parts.size(), m);
      std::size_t lo = parts[0].cols(), hi = parts[0].cols();
      for (const auto& p : parts) {
        lo = std::min(lo, p.cols());
        hi = std::max(hi, p.cols());
      }
      EXPECT_LE(hi - lo, 1u);
      EXPECT_EQ(ConcatCols(parts), x);
    }
  }
  ExpectCode(ErrorCode::kValidation,
             [] { PartitionFeatures(Iota(2, 3), 4, PartitionScheme::kContiguousCols); });
}

// Centralized logistic regression by full-batch gradient descent.
double LogisticAccuracy(const VerticalDataset& train, const VerticalDataset& test) {
  const Matrix x = ConcatCols(train.features);
  const Matrix xt = ConcatCols(test.features);
  std::vector<double> w(x.cols() + 1, 0.0);
  for (int it = 0; it < 300; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double z = w.back();
      for (std::size_t c = 0; c < x.cols(); ++c) z += w[c] * x(r, c);
      const double p = 1 / (1 + std::exp(-z));
      const double e = p - train.labels[r];
      for (std::size_t c = 0; c < x.cols(); ++c) g[c] += e * x(r, c);
      g.back() += e;
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= 0.5 * g[k] / static_cast<double>(x.rows());
  }
  std::size_t ok = 0;
  for (std::size_t r = 0; r < xt.rows(); ++r) {
    double z = w.back();
    for (std::size_t c = 0; c < xt.cols(); ++c) z += w[c] * xt(r, c);
    ok += (z > 0 ? 1 : 0) == test.labels[r];
  }
  return static_cast<double>(ok) / static_cast<double>(xt.rows());
}

TEST(MakeSynthetic, SeparableAtMarginTen) {
  const auto ds = MakeSynthetic(200, 10, 2, 2, 10.0, 1);
  EXPECT_GE(LogisticAccuracy(ds, ds), 0.99);
}

TEST(MakeSynthetic, NoSignalAtMarginZero) {
  const auto ds = MakeSynthetic(4000, 10, 2, 2, 0.0, 2);
  const auto [train, test] = SplitRows(ds, 2000);
  EXPECT_NEAR(LogisticAccuracy(train, test), 0.5, 0.05);
}

TEST(MakeSynthetic, DeterministicAndValidated) {
  const auto a = MakeSynthetic(50, 6, 3, 3, 2.0, 9);
  const auto b = MakeSynthetic(50, 6, 3, 3, 2.0, 9);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.num_devices(), 3u);
  ExpectCode(ErrorCode::kValidation, [] { MakeSynthetic(2, 6, 2, 3, 1.0, 1); });
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("dpzv_data_test_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string Write(const std::string& name, const std::string& bytes) {
    const auto p = (dir_ / name).string();
    std::ofstream(p, std::ios::binary) << bytes;
    return p;
  }

  std::filesystem::path dir_;
};

std::string Be32(uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
          static_cast<char>(v)};
}

std::string IdxImages(uint32_t n, uint32_t rows, uint32_t cols, const std::string& pixels) {
  return Be32(0x803) + Be32(n) + Be32(rows) + Be32(cols) + pixels;
}

std::string IdxLabels(const std::string& labels) {
  return Be32(0x801) + Be32(static_cast<uint32_t>(labels.size())) + labels;
}

using IdxTest = TempDir;

TEST_F(IdxTest, LoadsFabricatedFile) {
  const std::string px = std::string(4, '\0') + std::string("\xff\x00\x80\x01", 4) +
                         std::string(4, '\x10');
  const auto img = Write("img", IdxImages(3, 2, 2, px));
  const auto lab = Write("lab", IdxLabels(std::string("\x01\x00\x02", 3)));
  const RawDataset raw = LoadIdx(img, lab);
  ASSERT_EQ(raw.features.rows(), 3u);
  ASSERT_EQ(raw.features.cols(), 4u);
  for (double v : raw.features.row(0)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(raw.features(1, 0), 1.0);
  EXPECT_NEAR(raw.features(1, 2), 128.0 / 255.0, 1e-15);
  EXPECT_EQ(raw.labels, (std::vector<int32_t>{1, 0, 2}));
  EXPECT_EQ(raw.image_rows, 2u);
}

TEST_F(IdxTest, Errors) {
  const std::string px(8, '\x05');
  const auto lab = Write("lab", IdxLabels(std::string("\x01\x00", 2)));
  const auto truncated = Write("trunc", IdxImages(2, 2, 2, px.substr(0, 7)));
  ExpectCode(ErrorCode::kFormat, [&] { LoadIdx(truncated, lab); });
  const auto bad_magic = Write("magic", Be32(0x801) + IdxImages(2, 2, 2, px).substr(4));
  ExpectCode(ErrorCode::kFormat, [&] { LoadIdx(bad_magic, lab); });
  const auto three_lab = Write("lab3", IdxLabels(std::string("\x01\x00\x01", 3)));
  const auto good = Write("good", IdxImages(2, 2, 2, px));
  ExpectCode(ErrorCode::kConsistency, [&] { LoadIdx(good, three_lab); });
  ExpectCode(ErrorCode::kIo, [&] { LoadIdx((dir_ / "missing").string(), lab); });
}

using CsvTest = TempDir;

TEST_F(CsvTest, LoadsAndRejects) {
  const auto ok = Write("ok.csv", "1,2,0\n3.5,-1,1\n\n0,0,1\n");
  const RawDataset raw = LoadCsv(ok);
  EXPECT_EQ(raw.features.rows(), 3u);
  EXPECT_EQ(raw.features.cols(), 2u);
  EXPECT_EQ(raw.features(1, 0), 3.5);
  EXPECT_EQ(raw.labels, (std::vector<int32_t>{0, 1, 1}));
  ExpectCode(ErrorCode::kFormat, [&] { LoadCsv(Write("r.csv", "1,2,0\n1,1\n")); });
  ExpectCode(ErrorCode::kFormat, [&] { LoadCsv(Write("x.csv", "1,a,0\n")); });
  ExpectCode(ErrorCode::kFormat, [&] { LoadCsv(Write("l.csv", "1,2,0.5\n")); });
}

TEST(BatchSample, FullBatchIsPermutation) {
  SeededStream s(1);
  auto ids = SampleBatchIds(37, 37, s);
  std::sort(ids.begin(), ids.end());
  for (uint32_t i = 0; i < 37; ++i) EXPECT_EQ(ids[i], i);
}

TEST(BatchSample, SingleDrawsAreUniform) {
  SeededStream s(2);
  std::vector<int> count(10, 0);
  constexpr int n = 100000;
  for (int i = 0; i < n; ++i) ++count[SampleBatchIds(10, 1, s)[0]];
  for (int c : count) EXPECT_NEAR(static_cast<double>(c) / n, 0.1, 0.005);
}

TEST(BatchSample, DistinctAndAligned) {
  const auto ds = MakeSynthetic(100, 6, 3, 2, 1.0, 4);
  SeededStream s(3);
  for (int t = 0; t < 50; ++t) {
    const Batch b = BatchSample(ds, 20, s);
    EXPECT_EQ(std::set<uint32_t>(b.ids.begin(), b.ids.end()).size(), 20u);
    for (std::size_t k = 0; k < b.ids.size(); ++k) {
      EXPECT_EQ(b.labels[k], ds.labels[b.ids[k]]);
      for (std::size_t m = 0; m < 3; ++m) {
        for (std::size_t c = 0; c < b.blocks[m].cols(); ++c) {
          EXPECT_EQ(b.blocks[m](k, c), ds.features[m](b.ids[k], c));
        }
      }
    }
  }
  ExpectCode(ErrorCode::kValidation, [&] { BatchSample(ds, 101, s); });
  ExpectCode(ErrorCode::kValidation, [&] { GatherRows(ds.features[0], std::vector<uint32_t>{100}); });
}

}  // namespace
}  // namespace dpzv
