#pragma once

#include "epiray/rng.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

/// Affine map x -> W x + b with W [out,in], b [out].
struct LinearParams {
  Tensor weight;
  Tensor bias;

  LinearParams() = default;
  LinearParams(std::size_t out_dim, std::size_t in_dim)
      : weight({out_dim, in_dim}), bias({out_dim}) {}

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
};

/// Glorot-uniform weights in +-sqrt(6/(in+out)), zero bias.
LinearParams xavier_init(DeterministicRng& rng, std::size_t out_dim, std::size_t in_dim);

/// Applies the map to every trailing-dim vector of x [..., in] -> [..., out].
Tensor linear_forward(const LinearParams& p, const Tensor& x);

struct LinearGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};

LinearGrads linear_backward(const LinearParams& p, const Tensor& x, const Tensor& grad_out);

/// Accumulating backward: adds parameter gradients into dw/db, writes dx.
void linear_backward_acc(const LinearParams& p, const Tensor& x, const Tensor& grad_out,
                         Tensor* dx, Tensor& dweight, Tensor& dbias);

// Single-vector forms used by inner loops; in/out are raw rows of length in/out_dim.
void linear_apply_vec(const LinearParams& p, const double* in, double* out);
void linear_backward_vec(const LinearParams& p, const double* in, const double* grad_out,
                         double* grad_in_acc, Tensor& dweight, Tensor& dbias);

}  // namespace epiray
