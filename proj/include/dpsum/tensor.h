// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DPSUM_TENSOR_H_
#define DPSUM_TENSOR_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dpsum {

using Shape = std::vector<int64_t>;

std::string ShapeString(const Shape& shape);
int64_t NumElements(const Shape& shape);

// Storage aligned to the SIMD packet size. Every buffer then starts at the
// same alignment, so vectorized reductions sum in the same order no matter
// where the allocator places them, which keeps runs bit-reproducible.
using AlignedVector = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major tensor of doubles with value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const;
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Product of all dimensions except the last.
  int64_t rows() const;
  // Last dimension (1 for rank-0).
  int64_t cols() const;

  Tensor Reshaped(Shape shape) const;

  bool AllFinite() const;
  double SquaredNorm() const;

  // this += other (same number of elements).
  void AddInPlace(const Tensor& other, double scale = 1.0);
  void ScaleInPlace(double scale);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  AlignedVector data_;
};

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Views a tensor as a rows() x cols() matrix, or as an explicit shape over a
// contiguous slice starting at `offset`.
MatrixMap AsMatrix(Tensor& t);
ConstMatrixMap AsMatrix(const Tensor& t);
MatrixMap AsMatrix(Tensor& t, int64_t offset, int64_t rows, int64_t cols);
ConstMatrixMap AsMatrix(const Tensor& t, int64_t offset, int64_t rows,
                        int64_t cols);

struct Parameter {
  Tensor value;
  bool trainable = true;
};

// Name-ordered parameter collection; iteration order is deterministic.
using ParamStore = std::map<std::string, Parameter>;
using GradMap = std::map<std::string, Tensor>;

int64_t CountParameters(const ParamStore& params, bool trainable_only = false);

// Euclidean norm of the concatenation of every tensor in the map.
double GlobalNorm(const GradMap& grads);

}  // namespace dpsum

#endif  // DPSUM_TENSOR_H_
