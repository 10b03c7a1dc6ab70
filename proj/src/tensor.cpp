// Copyright 2026 The ddad Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ddad/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ddad/errors.hpp"

namespace ddad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " does not match " +
                     std::to_string(data_.size()) + " elements");
  }
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n, m}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape_));
  }
  return shape_[axis];
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t w = row_size();
  return std::span<double>(data_).subspan(i * w, w);
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t w = row_size();
  return std::span<const double>(data_).subspan(i * w, w);
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ShapeError("item() requires a single element, shape is " + shape_str(shape_));
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::flattened() const {
  return reshaped({shape_[0], data_.size() / shape_[0]});
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const noexcept {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("gather_rows needs at least one index");
  Shape shape = t.shape();
  shape[0] = indices.size();
  const std::size_t w = t.row_size();
  std::vector<double> data(indices.size() * w);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= t.rows()) {
      throw ShapeError("row index " + std::to_string(indices[k]) + " out of range for " +
                       shape_str(t.shape()));
    }
    auto src = t.row(indices[k]);
    std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(k * w));
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows needs at least one tensor");
  Shape shape = parts[0].shape();
  std::size_t rows = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    Shape tail(p.shape().begin() + 1, p.shape().end());
    Shape head_tail(shape.begin() + 1, shape.end());
    if (tail != head_tail) {
      throw ShapeError("concat_rows: " + shape_str(p.shape()) + " vs " + shape_str(shape));
    }
    rows += p.rows();
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace ddad
