#pragma once

#include <memory>
#include <vector>

#include "epiray/camera.hpp"
#include "epiray/linear.hpp"
#include "epiray/ray_encoding.hpp"
#include "epiray/ray_sampling.hpp"
#include "epiray/rng.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

struct EcaConfig {
  int k_views = 4;     // K: target + K-1 nearest references
  int s_samples = 16;  // S: depth samples per ray
  int channels = 8;    // C: feature channel width
  double near = 0.8;
  double far = 2.8;
  HarmonicConfig harmonic{4, M_PI};

  void validate() const;
};

/// All learnable tensors of one block. The final output projection starts at
/// exactly zero so a fresh block is an exact identity on the target map.
struct EcaBlockParams {
  LinearParams cross_q, cross_k, cross_v, cross_out;
  LinearParams self_q, self_k, self_v, self_out;
  LinearParams ray_proj;   // 2*L*6 -> C
  LinearParams fusion;     // C -> 1
  LinearParams final_out;  // C -> C, zero at init

  /// Applies fn to every parameter tensor, in a fixed documented order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("cross_q.weight", cross_q.weight); fn("cross_q.bias", cross_q.bias);
    fn("cross_k.weight", cross_k.weight); fn("cross_k.bias", cross_k.bias);
    fn("cross_v.weight", cross_v.weight); fn("cross_v.bias", cross_v.bias);
    fn("cross_out.weight", cross_out.weight); fn("cross_out.bias", cross_out.bias);
    fn("self_q.weight", self_q.weight); fn("self_q.bias", self_q.bias);
    fn("self_k.weight", self_k.weight); fn("self_k.bias", self_k.bias);
    fn("self_v.weight", self_v.weight); fn("self_v.bias", self_v.bias);
    fn("self_out.weight", self_out.weight); fn("self_out.bias", self_out.bias);
    fn("ray_proj.weight", ray_proj.weight); fn("ray_proj.bias", ray_proj.bias);
    fn("fusion.weight", fusion.weight); fn("fusion.bias", fusion.bias);
    fn("final_out.weight", final_out.weight); fn("final_out.bias", final_out.bias);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<EcaBlockParams*>(this)->for_each(
        [&](const char* name, Tensor& t) { fn(name, const_cast<const Tensor&>(t)); });
  }
};

/// Inner projections are Glorot-uniform (drawn from rng in for_each order),
/// biases zero; final_out stays all-zero.
EcaBlockParams init_eca_params(DeterministicRng& rng, const EcaConfig& cfg);

/// Zero-valued gradient holder with the same structure.
EcaBlockParams zero_eca_params(const EcaConfig& cfg);

/// Reprojection geometry plus canonicalized-ray harmonic encodings for one
/// (layout, target view, feature grid). Pure function of the cameras; cache it
/// across forward passes when the cameras do not change.
struct EcaPlan {
  SampleGeometry geo;
  Tensor harmonic;  // [K, P, S, 2*L*6]
};

EcaPlan make_eca_plan(const ViewLayout& layout, int target_index, int feat_h, int feat_w,
                      const EcaConfig& cfg);

// Saved forward state (per stage) for the manual backward pass.
struct CrossAttnContext {
  Tensor injected;   // [K,P,S,C] volume after ray-encoding injection
  Tensor q;          // [P,S,C]
  Tensor k, v;       // [K-1,P,S,C]
  Tensor weights;    // [P,S,(K-1)*S]
  std::vector<std::uint8_t> fully_masked;  // per (p,s) row
  Tensor attn;       // [P,S,C] attention result before the out projection
};

struct SelfAttnContext {
  Tensor input;    // [P,S,C]
  Tensor q, k, v;  // [P,S,C]
  Tensor weights;  // [P,S,S]
  Tensor attn;     // [P,S,C]
};

struct FuseContext {
  Tensor input;    // [P,S,C]
  Tensor weights;  // [P,S]
};

struct EcaContext {
  std::shared_ptr<const EcaPlan> plan;
  std::size_t n_views = 0;     // number of input maps
  std::size_t channels = 0;
  Tensor raw_volume;           // [K,P,S,C] gathered features
  CrossAttnContext cross;
  SelfAttnContext self_attn;
  FuseContext fuse;
  Tensor fused;                // [P,C]
};

/// Eq-6 stage: per (pixel, depth sample) query over the (K-1)*S reference
/// samples of the same pixel; invalid keys masked; rows with no valid key get
/// the value projection of their own query instead; residual-added.
Tensor near_views_cross_attention(const Tensor& injected_volume, const Tensor& valid,
                                  const EcaBlockParams& params, const EcaConfig& cfg,
                                  CrossAttnContext* ctx = nullptr);

/// Eq-7 stage: self-attention across the S depth positions of each pixel,
/// residual-added.
Tensor ray_self_attention(const Tensor& v_tilde, const EcaBlockParams& params,
                          SelfAttnContext* ctx = nullptr);

/// Weighted fusion over depth: softmax over the per-sample scalar head.
Tensor fuse_ray_to_pixel(const Tensor& v_bar, const EcaBlockParams& params,
                         FuseContext* ctx = nullptr);

/// Full block: gather, inject encodings, Eq. 6, Eq. 7, fusion, zero-init final
/// projection, residual onto the target map. Returns [H,W,C].
Tensor eca_forward(const std::vector<Tensor>& feature_maps, const ViewLayout& layout,
                   int target_index, const EcaConfig& cfg, const EcaBlockParams& params,
                   EcaContext* ctx = nullptr);

/// Same, with a precomputed plan (bit-identical results).
Tensor eca_forward_planned(const std::vector<Tensor>& feature_maps,
                           std::shared_ptr<const EcaPlan> plan, const EcaConfig& cfg,
                           const EcaBlockParams& params, EcaContext* ctx = nullptr);

struct EcaGrads {
  EcaBlockParams params;
  std::vector<Tensor> feature_maps;
};

/// Analytic gradients for every parameter and all N input maps.
EcaGrads eca_backward(const EcaContext& ctx, const EcaConfig& cfg, const EcaBlockParams& params,
                      const Tensor& grad_out);

/// Accumulating form: adds into param_grads / map_grads (shapes must match).
void eca_backward_acc(const EcaContext& ctx, const EcaConfig& cfg, const EcaBlockParams& params,
                      const Tensor& grad_out, EcaBlockParams& param_grads,
                      std::vector<Tensor>& map_grads);

}  // namespace epiray
