#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace epiray {

std::string shape_to_string(const std::vector<std::size_t>& shape);

/// Dense row-major array of 64-bit floats with shape metadata.
/// A rank-0 tensor (empty shape) is a scalar holding exactly one element.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access with bounds checks. Flat operator[] is the hot path.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Same data, new shape; element counts must match.
  Tensor reshaped(std::vector<std::size_t> new_shape) const;

  void fill(double value);

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const;

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Elementwise arithmetic; shapes must match exactly.
Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor& operator+=(Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// Standard matrix product of a [m,k] and b [k,n]; accumulates in doubles.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

double sum(const Tensor& a);
double mean(const Tensor& a);
double dot_flat(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);
bool bit_equal(const Tensor& a, const Tensor& b);

[[noreturn]] void throw_shape_mismatch(const std::string& op,
                                       const std::vector<std::size_t>& a,
                                       const std::vector<std::size_t>& b);

}  // namespace epiray
