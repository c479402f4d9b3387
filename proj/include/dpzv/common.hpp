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

#ifndef DPZV_COMMON_HPP_
#define DPZV_COMMON_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpzv {

enum class ErrorCode {
  kInvalidDimension,
  kInvalidParameter,
  kShape,
  kValidation,
  kNumeric,
  kProtocolState,
  kConfiguration,
  kBracket,
  kFormat,
  kConsistency,
  kInfinitePrivacyLoss,
  kIo,
};

inline std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidDimension: return "invalid-dimension";
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kProtocolState: return "protocol-state";
    case ErrorCode::kConfiguration: return "configuration";
    case ErrorCode::kBracket: return "bracket";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kConsistency: return "consistency";
    case ErrorCode::kInfinitePrivacyLoss: return "infinite-privacy-loss";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + " error: " +
                           what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define DPZV_ENFORCE(cond, code, msg)          \
  do {                                         \
    if (!(cond)) {                             \
      throw ::dpzv::Error((code), (msg));      \
    }                                          \
  } while (0)

/// Dense row-major matrix of doubles. Used for features, embeddings and
/// activations; trainable parameters live in FlatParams instead.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    DPZV_ENFORCE(data_.size() == rows_ * cols_, ErrorCode::kShape,
                 "matrix data size does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace dpzv

#endif  // DPZV_COMMON_HPP_
