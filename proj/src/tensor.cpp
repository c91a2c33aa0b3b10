#include "epiray/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace epiray {

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void throw_shape_mismatch(const std::string& op, const std::vector<std::size_t>& a,
                          const std::vector<std::size_t>& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_to_string(a) + " vs " +
                              shape_to_string(b));
}

namespace {
std::size_t checked_element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("Tensor: zero dimension in " + shape_to_string(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_element_count(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: " + shape_to_string(shape_) + " needs " +
                                std::to_string(checked_element_count(shape_)) +
                                " elements, got " + std::to_string(data_.size()));
  }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::invalid_argument("Tensor::dim: axis " + std::to_string(axis) + " out of range for " +
                                shape_to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> idx) const {
  if (idx.size() != shape_.size()) {
    throw std::invalid_argument("Tensor::at: got " + std::to_string(idx.size()) +
                                " indices for shape " + shape_to_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : idx) {
    if (i >= shape_[axis]) {
      throw std::out_of_range("Tensor::at: index " + std::to_string(i) + " out of range on axis " +
                              std::to_string(axis) + " of " + shape_to_string(shape_));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) { return data_[flat_index(idx)]; }
double Tensor::at(std::initializer_list<std::size_t> idx) const { return data_[flat_index(idx)]; }

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
  if (checked_element_count(new_shape) != data_.size()) {
    throw_shape_mismatch("reshape", shape_, new_shape);
  }
  return Tensor(std::move(new_shape), data_);
}

void Tensor::fill(double value) {
  for (double& x : data_) x = value;
}

namespace {
template <typename F>
Tensor zip(const char* op, const Tensor& a, const Tensor& b, F f) {
  if (!a.same_shape(b)) throw_shape_mismatch(op, a.shape(), b.shape());
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = f(pa[i], pb[i]);
  return out;
}
}  // namespace

Tensor operator+(const Tensor& a, const Tensor& b) {
  return zip("add", a, b, [](double x, double y) { return x + y; });
}
Tensor operator-(const Tensor& a, const Tensor& b) {
  return zip("sub", a, b, [](double x, double y) { return x - y; });
}
Tensor operator*(const Tensor& a, const Tensor& b) {
  return zip("mul", a, b, [](double x, double y) { return x * y; });
}

Tensor& operator+=(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("add_inplace", a.shape(), b.shape());
  double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) pa[i] += pb[i];
  return a;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw_shape_mismatch("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose2d: need rank-2, got " + shape_to_string(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

double sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

double mean(const Tensor& a) { return sum(a) / static_cast<double>(a.size()); }

double dot_flat(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw_shape_mismatch("dot_flat", a.shape(), b.shape());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw_shape_mismatch("max_abs_diff", a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) return false;
  }
  return true;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace epiray
