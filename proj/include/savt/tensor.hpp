#pragma once

#include <cassert>
#include <cstddef>
#include <string>
#include <vector>

#include "savt/error.hpp"

namespace savt {

std::string shape_to_string(const std::vector<std::size_t>& shape);

// Dense row-major tensor of 64-bit reals. All computation happens in double;
// 32-bit values exist only inside the file container and are promoted on load.
class Tensor {
 public:
  Tensor() = default;

  // Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape);

  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor row(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& flat() const { return data_; }

  double& operator[](std::size_t i) {
    assert(i < data_.size());
    return data_[i];
  }
  double operator[](std::size_t i) const {
    assert(i < data_.size());
    return data_[i];
  }

  double& operator()(std::size_t i, std::size_t j) {
    assert(shape_.size() == 2);
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    assert(shape_.size() == 2);
    return data_[i * shape_[1] + j];
  }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    assert(shape_.size() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    assert(shape_.size() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace savt
