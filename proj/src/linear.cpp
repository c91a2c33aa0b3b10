#include "epiray/linear.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray {

LinearParams xavier_init(DeterministicRng& rng, std::size_t out_dim, std::size_t in_dim) {
  LinearParams p(out_dim, in_dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  rng.fill_uniform(p.weight, -bound, bound);
  return p;
}

namespace {
std::size_t leading_rows(const Tensor& x, std::size_t in_dim, const char* op) {
  if (x.rank() == 0 || x.shape().back() != in_dim) {
    throw std::invalid_argument(std::string(op) + ": trailing dim of " +
                                shape_to_string(x.shape()) + " != in_dim " +
                                std::to_string(in_dim));
  }
  return x.size() / in_dim;
}
}  // namespace

Tensor linear_forward(const LinearParams& p, const Tensor& x) {
  const std::size_t in = p.in_dim(), out = p.out_dim();
  const std::size_t rows = leading_rows(x, in, "linear_forward");
  std::vector<std::size_t> out_shape = x.shape();
  out_shape.back() = out;
  Tensor y(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    linear_apply_vec(p, x.data() + r * in, y.data() + r * out);
  }
  return y;
}

void linear_apply_vec(const LinearParams& p, const double* in, double* out) {
  const std::size_t ni = p.in_dim(), no = p.out_dim();
  const double* w = p.weight.data();
  for (std::size_t o = 0; o < no; ++o) {
    double acc = p.bias[o];
    const double* wrow = w + o * ni;
    for (std::size_t i = 0; i < ni; ++i) acc += wrow[i] * in[i];
    out[o] = acc;
  }
}

void linear_backward_vec(const LinearParams& p, const double* in, const double* grad_out,
                         double* grad_in_acc, Tensor& dweight, Tensor& dbias) {
  const std::size_t ni = p.in_dim(), no = p.out_dim();
  const double* w = p.weight.data();
  double* dw = dweight.data();
  for (std::size_t o = 0; o < no; ++o) {
    const double g = grad_out[o];
    dbias[o] += g;
    if (g == 0.0) continue;
    const double* wrow = w + o * ni;
    double* dwrow = dw + o * ni;
    for (std::size_t i = 0; i < ni; ++i) {
      dwrow[i] += g * in[i];
      if (grad_in_acc) grad_in_acc[i] += g * wrow[i];
    }
  }
}

void linear_backward_acc(const LinearParams& p, const Tensor& x, const Tensor& grad_out,
                         Tensor* dx, Tensor& dweight, Tensor& dbias) {
  const std::size_t in = p.in_dim(), out = p.out_dim();
  const std::size_t rows = leading_rows(x, in, "linear_backward");
  if (grad_out.size() != rows * out || grad_out.shape().back() != out) {
    throw_shape_mismatch("linear_backward", grad_out.shape(), p.weight.shape());
  }
  for (std::size_t r = 0; r < rows; ++r) {
    linear_backward_vec(p, x.data() + r * in, grad_out.data() + r * out,
                        dx ? dx->data() + r * in : nullptr, dweight, dbias);
  }
}

LinearGrads linear_backward(const LinearParams& p, const Tensor& x, const Tensor& grad_out) {
  LinearGrads g;
  g.dx = Tensor::zeros(x.shape());
  g.dweight = Tensor::zeros(p.weight.shape());
  g.dbias = Tensor::zeros(p.bias.shape());
  linear_backward_acc(p, x, grad_out, &g.dx, g.dweight, g.dbias);
  return g;
}

}  // namespace epiray
