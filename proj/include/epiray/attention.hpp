#pragma once

#include <cstdint>
#include <vector>

#include "epiray/tensor.hpp"

namespace epiray {

/// Softmax over the last dim with max-subtraction.
/// mask (same shape, nonzero = keep) zeroes excluded entries exactly. Rows whose
/// mask is all-zero get uniform weights over the whole row and are flagged in
/// fully_masked (one flag per last-dim row) so callers can substitute.
struct SoftmaxResult {
  Tensor probs;
  std::vector<std::uint8_t> fully_masked;
};

SoftmaxResult softmax_lastdim(const Tensor& x, const Tensor* mask = nullptr);

/// Gradient of logits given probs and d(probs). Masked entries (prob exactly 0)
/// and fully-masked rows (constant uniform output) get zero gradient.
Tensor softmax_backward_lastdim(const SoftmaxResult& sm, const Tensor& grad_probs);

/// Saved forward state for attention_backward.
struct AttentionContext {
  Tensor q, k, v;
  Tensor weights;
  std::vector<std::uint8_t> fully_masked;
  bool has_mask = false;
  Tensor mask;
};

struct AttentionResult {
  Tensor out;      // [Lq, dv]
  Tensor weights;  // [Lq, Lk]
  AttentionContext ctx;
};

/// Single-head scaled dot-product attention.
/// q [Lq,d], k [Lk,d], v [Lk,dv], optional boolean mask [Lq,Lk] (nonzero = attend).
/// weights = softmax(q k^T / sqrt(d)) with masked entries exactly 0; out = weights v.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                     const Tensor* mask = nullptr);

struct AttentionGrads {
  Tensor dq, dk, dv;
};

AttentionGrads attention_backward(const AttentionContext& ctx, const Tensor& grad_out);

}  // namespace epiray
