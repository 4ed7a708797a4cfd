/*
 * Copyright 2026 The microdense authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MICRODENSE_TENSOR_HPP_
#define MICRODENSE_TENSOR_HPP_

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace microdense {

/// Error type thrown by every operation in this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <typename Scalar>
using MatrixRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

/// Dense N-dimensional value array. Canonical image layout is
/// (batch, channels, height, width), stored contiguously row-major.
/// All math goes through Eigen maps over the flat storage.
template <typename Scalar>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(numel(shape_)), Scalar(0));
  }

  Tensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (numel(shape_) != static_cast<std::int64_t>(data_.size()))
      throw Error("tensor: shape " + shape_str(shape_) + " wants " +
                  std::to_string(numel(shape_)) + " elements, got " +
                  std::to_string(data_.size()));
  }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor from(Shape shape, std::initializer_list<Scalar> vals) {
    return Tensor(std::move(shape), std::vector<Scalar>(vals));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Scalar& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  /// 4-d accessor for the canonical (B,C,H,W) layout.
  Scalar& at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(offset4(b, c, h, w))];
  }
  Scalar at(std::int64_t b, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(offset4(b, c, h, w))];
  }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(Scalar(0)); }

  /// Zero-fill, reallocating only when the shape changed.
  void reset(const Shape& shape) {
    if (shape_ != shape) {
      shape_ = shape;
      validate_shape();
      data_.assign(static_cast<std::size_t>(numel(shape_)), Scalar(0));
    } else {
      set_zero();
    }
  }

  // Eigen views over the flat storage.
  auto array() {
    return Eigen::Map<ArrayX<Scalar>>(data_.data(), size());
  }
  auto array() const {
    return Eigen::Map<const ArrayX<Scalar>>(data_.data(), size());
  }
  auto vec() {
    return Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(data_.data(), size());
  }
  auto vec() const {
    return Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(data_.data(), size());
  }
  auto matrix(std::int64_t rows, std::int64_t cols) {
    return Eigen::Map<MatrixRM<Scalar>>(data_.data(), rows, cols);
  }
  auto matrix(std::int64_t rows, std::int64_t cols) const {
    return Eigen::Map<const MatrixRM<Scalar>>(data_.data(), rows, cols);
  }

  bool same_values(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> r;
    r = Tensor<Other>(shape_);
    for (std::int64_t i = 0; i < size(); ++i)
      r[i] = static_cast<Other>(data_[static_cast<std::size_t>(i)]);
    return r;
  }

private:
  void validate_shape() const {
    for (auto e : shape_)
      if (e < 1)
        throw Error("tensor: extent " + std::to_string(e) + " in shape " +
                    shape_str(shape_) + " must be >= 1");
  }

  std::int64_t offset4(std::int64_t b, std::int64_t c, std::int64_t h,
                       std::int64_t w) const {
    return ((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace microdense

#endif  // MICRODENSE_TENSOR_HPP_
