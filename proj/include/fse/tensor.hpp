#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fse/errors.hpp"

namespace fse {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    FSE_CHECK(d >= 0, ShapeError, "negative dimension");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Images and feature maps use [N, C, H, W]; other
// ranks appear for parameters (e.g. expert stacks are rank 5).
template <typename T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  TensorT(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    FSE_CHECK(std::int64_t(data_.size()) == shape_numel(shape_), ShapeError,
              "data size does not match shape " + shape_str(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, T v) { return TensorT(std::move(shape), v); }
  static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }
  static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

  bool empty() const { return data_.empty(); }
  std::int64_t numel() const { return std::int64_t(data_.size()); }
  int rank() const { return int(shape_.size()); }
  const Shape& shape() const { return shape_; }
  std::int64_t size(int i) const { return shape_.at(std::size_t(i)); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::int64_t i) { return data_[std::size_t(i)]; }
  const T& operator[](std::int64_t i) const { return data_[std::size_t(i)]; }

  // [N, C, H, W] accessor
  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[std::size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[std::size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  TensorT reshaped(Shape s) const {
    FSE_CHECK(shape_numel(s) == numel(), ShapeError,
              "reshape " + shape_str(shape_) + " -> " + shape_str(s));
    TensorT out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  T min_value() const { return data_.empty() ? T(0) : *std::min_element(data_.begin(), data_.end()); }
  T max_value() const { return data_.empty() ? T(0) : *std::max_element(data_.begin(), data_.end()); }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = U(data_[std::size_t(i)]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = TensorT<float>;

template <typename T>
void check_image_shape(const TensorT<T>& t, const char* what) {
  FSE_CHECK(t.rank() == 4, ShapeError, std::string(what) + ": expected rank-4, got " + shape_str(t.shape()));
  FSE_CHECK(t.size(0) >= 1 && t.size(2) >= 1 && t.size(3) >= 1, ShapeError,
            std::string(what) + ": degenerate shape " + shape_str(t.shape()));
  FSE_CHECK(t.size(1) == 1 || t.size(1) == 3, ShapeError,
            std::string(what) + ": channel count must be 1 or 3, got " + shape_str(t.shape()));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  FSE_CHECK(a.same_shape(b), ShapeError,
            std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Elementwise clamp, used at image boundaries and for metric preprocessing.
template <typename T>
TensorT<T> clamp01(const TensorT<T>& t) {
  TensorT<T> out = t;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(T(1), std::max(T(0), out[i]));
  return out;
}

}  // namespace fse
