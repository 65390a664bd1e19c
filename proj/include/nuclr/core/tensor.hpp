// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "nuclr/core/errors.hpp"

namespace nuclr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
constexpr std::string_view dtype_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  if constexpr (std::is_same_v<T, float>) return "f32";
  else return "f64";
}

/// Dense row-major array. The dtype is the template argument.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    check_shape();
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == shape_numel(shape_), ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorCode::ShapeMismatch, "ragged matrix literal");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// 2-D element access for matrices.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

  /// Rows when viewed as [prod(shape[:-1]), shape[-1]].
  std::size_t rows() const { return shape_.empty() ? 1 : numel() / shape_.back(); }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  Tensor reshaped(Shape s) const {
    require(shape_numel(s) == numel(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Throws NonFinite when any entry is NaN or infinite.
  const Tensor& check_finite(std::string_view where) const {
    require(all_finite(), ErrorCode::NonFinite, "non-finite value in " + std::string(where));
    return *this;
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (auto d : shape_) require(d > 0, ErrorCode::ShapeMismatch, "zero-sized dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace nuclr
