#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace jekyll::nn {

#ifdef JEKYLL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

/// Dense row-major tensor. Image batches use NCHW layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Real fill = Real(0));
  Tensor(std::vector<int> shape, std::vector<Real> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (n, c, h, w).
  Real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  void fill(Real v);
  Tensor reshaped(std::vector<int> shape) const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_string() const;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::size_t element_count(const std::vector<int>& shape);

}  // namespace jekyll::nn
