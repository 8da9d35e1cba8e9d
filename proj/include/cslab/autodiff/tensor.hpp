#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cslab::ad {

// Dense row-major array. Rank 0 (scalar), 1 and 2 are the ranks the engine uses.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0));
  Tensor(std::vector<std::size_t> shape, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor({}, std::vector<T>{v}); }
  static Tensor vector(std::initializer_list<T> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  // Rank-2 view: rank 1 tensors are one row; scalars are 1x1.
  std::size_t rows() const;
  std::size_t cols() const;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T item() const;

  void fill(T v);
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

std::string shape_to_string(const std::vector<std::size_t>& shape);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cslab::ad
