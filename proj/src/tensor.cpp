#include "cslab/autodiff/tensor.hpp"

#include <functional>
#include <numeric>
#include <stdexcept>

namespace cslab::ad {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

namespace {
std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, T fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: shape " + shape_to_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
  return Tensor({rows, cols}, std::vector<T>(values));
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (shape_.size() == 2) return shape_[0];
  return 1;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (shape_.size() == 2) return shape_[1];
  if (shape_.size() == 1) return shape_[0];
  return 1;
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_to_string(shape_));
  return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
std::string Tensor<T>::shape_str() const {
  return shape_to_string(shape_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace cslab::ad
