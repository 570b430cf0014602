#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capslstm/error.hpp"

namespace capslstm {

using Shape = std::vector<std::size_t>;

// Product of extents; the empty shape (rank 0) has one element.
std::size_t shape_size(const Shape& shape);

// "(120,120,256)"
std::string shape_string(const Shape& shape);

// Dense row-major array. Every extent is >= 1 and the buffer length always
// equals the product of the extents. A default-constructed tensor is a rank-0
// scalar holding zero.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T{}) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_extents(shape_);
    data_.assign(shape_size(shape_), T{});
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_extents(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor buffer holds " + std::to_string(data_.size()) +
                           " values but shape " + shape_string(shape_) + " needs " +
                           std::to_string(shape_size(shape_)));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ArgumentError("axis " + std::to_string(axis) + " out of range for rank " +
                          std::to_string(shape_.size()));
    }
    return shape_[axis];
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  void reshape(Shape shape) {
    validate_extents(shape);
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }

  // Copy of the sub-tensor at `index` along the leading axis.
  Tensor slice(std::size_t index) const {
    if (rank() == 0 || index >= shape_[0]) {
      throw DimensionError("slice index " + std::to_string(index) + " out of range for " +
                           shape_string(shape_));
    }
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t n = shape_size(inner);
    auto first = data_.begin() + static_cast<std::ptrdiff_t>(index * n);
    return Tensor(std::move(inner), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(n)));
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T scale) {
    for (auto& v : data_) v *= scale;
    return *this;
  }

  bool operator==(const Tensor& other) const = default;

  void require_same_shape(const Tensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw DimensionError(std::string(what) + ": shape " + shape_string(shape_) + " vs " +
                           shape_string(other.shape_));
    }
  }

 private:
  static void validate_extents(const Shape& shape) {
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw DimensionError("index rank " + std::to_string(index.size()) + " vs tensor rank " +
                           std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
  if (items.empty()) throw ArgumentError("stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<T> data;
  data.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    t.require_same_shape(items.front(), "stack");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace capslstm
