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

#include "dpsum/tensor.h"

#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "dpsum/common.h"

namespace dpsum {

std::string ShapeString(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

int64_t NumElements(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) {
      throw ShapeError(
          fmt::format("non-positive dimension in shape {}", ShapeString(shape)));
    }
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      data_(static_cast<size_t>(NumElements(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (NumElements(shape_) != static_cast<int64_t>(data_.size())) {
    throw ShapeError(fmt::format("shape {} does not hold {} values",
                                 ShapeString(shape_), data_.size()));
  }
}

int64_t Tensor::dim(int64_t axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw ShapeError(
        fmt::format("axis {} out of range for {}", axis, ShapeString(shape_)));
  }
  return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return size() / shape_.back();
}

int64_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

Tensor Tensor::Reshaped(Shape shape) const {
  if (NumElements(shape) != size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", ShapeString(shape_),
                                 ShapeString(shape)));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

bool Tensor::AllFinite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor::SquaredNorm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return s;
}

void Tensor::AddInPlace(const Tensor& other, double scale) {
  if (other.size() != size()) {
    throw ShapeError(fmt::format("cannot add {} into {}",
                                 ShapeString(other.shape_),
                                 ShapeString(shape_)));
  }
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
}

void Tensor::ScaleInPlace(double scale) {
  for (double& v : data_) v *= scale;
}

MatrixMap AsMatrix(Tensor& t) {
  return MatrixMap(t.data().data(), t.rows(), t.cols());
}

ConstMatrixMap AsMatrix(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), t.rows(), t.cols());
}

MatrixMap AsMatrix(Tensor& t, int64_t offset, int64_t rows, int64_t cols) {
  return MatrixMap(t.data().data() + offset, rows, cols);
}

ConstMatrixMap AsMatrix(const Tensor& t, int64_t offset, int64_t rows,
                        int64_t cols) {
  return ConstMatrixMap(t.data().data() + offset, rows, cols);
}

int64_t CountParameters(const ParamStore& params, bool trainable_only) {
  int64_t n = 0;
  for (const auto& [name, p] : params) {
    if (!trainable_only || p.trainable) n += p.value.size();
  }
  return n;
}

double GlobalNorm(const GradMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) s += g.SquaredNorm();
  return std::sqrt(s);
}

}  // namespace dpsum
