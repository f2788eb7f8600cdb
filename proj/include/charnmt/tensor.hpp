#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "charnmt/errors.hpp"

namespace charnmt {

using Shape = std::vector<int>;

// Wide precision is used for gradient checks, narrow for training speed.
enum class Precision { narrow, wide };

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
constexpr const char* dtype_name() {
  if constexpr (sizeof(T) == 8) {
    return "f64";
  } else {
    return "f32";
  }
}

// Storage starts on a 64-byte boundary so vectorized reductions split the
// same way on every run, whatever address the allocator hands out.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor of rank 1 or 2. A rank-1 tensor of extent n behaves
// as a 1 x n matrix wherever a matrix is expected.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    values_.assign(checked_count(shape_), fill);
  }

  Tensor(Shape shape, AlignedVector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_count(shape_) != values_.size()) {
      throw DimensionError("tensor " + shape_string(shape_) + " given " +
                           std::to_string(values_.size()) + " values");
    }
  }

  Tensor(Shape shape, const std::vector<T>& values)
      : Tensor(std::move(shape), AlignedVector<T>(values.begin(), values.end())) {}

  static Tensor vector(std::initializer_list<T> values) {
    return Tensor({static_cast<int>(values.size())}, AlignedVector<T>(values));
  }

  static Tensor matrix(int rows, int cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, AlignedVector<T>(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  AlignedVector<T>& storage() { return values_; }
  const AlignedVector<T>& storage() const { return values_; }

  T& operator[](std::size_t i) { return values_[i]; }
  const T& operator[](std::size_t i) const { return values_[i]; }
  T& at(int r, int c) { return values_[static_cast<std::size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const {
    return values_[static_cast<std::size_t>(r) * cols() + c];
  }

  std::span<T> row(int r) {
    return std::span<T>(values_).subspan(static_cast<std::size_t>(r) * cols(), cols());
  }
  std::span<const T> row(int r) const {
    return std::span<const T>(values_).subspan(static_cast<std::size_t>(r) * cols(),
                                               cols());
  }

  void fill(T value) { std::fill(values_.begin(), values_.end(), value); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    AlignedVector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && values_ == other.values_;
  }

 private:
  static std::size_t checked_count(const Shape& shape) {
    if (shape.empty() || shape.size() > 2) {
      throw DimensionError("tensor rank must be 1 or 2, got " + shape_string(shape));
    }
    std::size_t n = 1;
    for (int extent : shape) {
      if (extent <= 0) {
        throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
      }
      n *= static_cast<std::size_t>(extent);
    }
    return n;
  }

  Shape shape_;
  AlignedVector<T> values_;
};

// Row-wise softmax with max subtraction; rank-1 input is one row.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.empty()) throw DomainError("softmax of an empty tensor");
  if (!logits.all_finite()) throw DomainError("softmax input is not finite");
  Tensor<T> out = logits;
  for (int r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const T peak = *std::max_element(row.begin(), row.end());
    T total = 0;
    for (T& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (T& v : row) v /= total;
  }
  return out;
}

}  // namespace charnmt
