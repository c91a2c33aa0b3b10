#include "epiray/attention.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace epiray {

SoftmaxResult softmax_lastdim(const Tensor& x, const Tensor* mask) {
  if (x.rank() == 0) throw std::invalid_argument("softmax_lastdim: rank-0 input");
  if (mask && !mask->same_shape(x)) throw_shape_mismatch("softmax_lastdim", x.shape(), mask->shape());

  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  SoftmaxResult res;
  res.probs = Tensor(x.shape());
  res.fully_masked.assign(rows, 0);

  for (std::size_t r = 0; r < rows; ++r) {
    const double* xin = x.data() + r * cols;
    const double* m = mask ? mask->data() + r * cols : nullptr;
    double* p = res.probs.data() + r * cols;

    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if ((!m || m[j] != 0.0) && xin[j] > mx) mx = xin[j];
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      // No admissible entry in this row: uniform fallback, flagged.
      res.fully_masked[r] = 1;
      const double u = 1.0 / static_cast<double>(cols);
      for (std::size_t j = 0; j < cols; ++j) p[j] = u;
      continue;
    }
    double denom = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!m || m[j] != 0.0) {
        p[j] = std::exp(xin[j] - mx);
        denom += p[j];
      } else {
        p[j] = 0.0;
      }
    }
    for (std::size_t j = 0; j < cols; ++j) p[j] /= denom;
  }
  return res;
}

Tensor softmax_backward_lastdim(const SoftmaxResult& sm, const Tensor& grad_probs) {
  const Tensor& p = sm.probs;
  if (!p.same_shape(grad_probs)) throw_shape_mismatch("softmax_backward", p.shape(), grad_probs.shape());
  const std::size_t cols = p.shape().back();
  const std::size_t rows = p.size() / cols;
  Tensor dl(p.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (sm.fully_masked[r]) continue;  // uniform fallback is constant in the logits
    const double* pr = p.data() + r * cols;
    const double* gr = grad_probs.data() + r * cols;
    double inner = 0.0;
    for (std::size_t j = 0; j < cols; ++j) inner += pr[j] * gr[j];
    double* dr = dl.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) dr[j] = pr[j] * (gr[j] - inner);
  }
  return dl;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const Tensor* mask) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw_shape_mismatch("scaled_dot_attention q/k", q.shape(), k.shape());
  }
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) {
    throw_shape_mismatch("scaled_dot_attention k/v", k.shape(), v.shape());
  }
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (mask && (mask->rank() != 2 || mask->dim(0) != lq || mask->dim(1) != lk)) {
    throw_shape_mismatch("scaled_dot_attention mask", mask->shape(), {lq, lk});
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor logits({lq, lk});
  for (std::size_t i = 0; i < lq; ++i) {
    const double* qi = q.data() + i * d;
    for (std::size_t j = 0; j < lk; ++j) {
      const double* kj = k.data() + j * d;
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
      logits[i * lk + j] = s * inv_sqrt_d;
    }
  }

  SoftmaxResult sm = softmax_lastdim(logits, mask);
  AttentionResult res;
  res.weights = sm.probs;
  res.out = matmul(res.weights, v);
  res.ctx.q = q;
  res.ctx.k = k;
  res.ctx.v = v;
  res.ctx.weights = res.weights;
  res.ctx.fully_masked = sm.fully_masked;
  res.ctx.has_mask = mask != nullptr;
  if (mask) res.ctx.mask = *mask;
  return res;
}

AttentionGrads attention_backward(const AttentionContext& ctx, const Tensor& grad_out) {
  if (ctx.q.size() == 0 || ctx.weights.size() == 0) {
    throw std::invalid_argument("attention_backward: missing forward context");
  }
  const std::size_t lq = ctx.q.dim(0), d = ctx.q.dim(1);
  const std::size_t lk = ctx.k.dim(0), dv = ctx.v.dim(1);
  if (grad_out.rank() != 2 || grad_out.dim(0) != lq || grad_out.dim(1) != dv) {
    throw_shape_mismatch("attention_backward", grad_out.shape(), {lq, dv});
  }

  AttentionGrads g;
  g.dv = matmul(transpose2d(ctx.weights), grad_out);
  Tensor dweights = matmul(grad_out, transpose2d(ctx.v));

  SoftmaxResult sm;
  sm.probs = ctx.weights;
  sm.fully_masked = ctx.fully_masked;
  Tensor dlogits = softmax_backward_lastdim(sm, dweights);

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  g.dq = scale(matmul(dlogits, ctx.k), inv_sqrt_d);
  g.dk = scale(matmul(transpose2d(dlogits), ctx.q), inv_sqrt_d);
  (void)lk;
  return g;
}

}  // namespace epiray
