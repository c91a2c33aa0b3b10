#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "epiray/camera.hpp"
#include "epiray/eca.hpp"
#include "epiray/linear.hpp"
#include "epiray/rng.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

/// DDPM-style schedule: beta[t-1] is the step-t noise level (t = 1..T);
/// alpha_bar(t) = prod_{s<=t} (1 - beta_s), alpha_bar(0) = 1.
struct NoiseSchedule {
  int t_steps = 0;
  std::vector<double> beta;       // [T]
  std::vector<double> alpha;      // [T], 1 - beta
  std::vector<double> alpha_bar;  // [T+1], index by t, [0] = 1

  double beta_at(int t) const { return beta.at(t - 1); }
  double alpha_at(int t) const { return alpha.at(t - 1); }
  double alpha_bar_at(int t) const { return alpha_bar.at(t); }
};

NoiseSchedule linear_beta_schedule(int t_steps, double beta_start, double beta_end);

/// One forward step: z_t = sqrt(1-beta_t) z_{t-1} + sqrt(beta_t) eps.
Tensor forward_diffuse_step(const Tensor& z_prev, int t, const NoiseSchedule& sched,
                            DeterministicRng& rng);

/// Closed form: z_t = sqrt(alpha_bar_t) z_0 + sqrt(1-alpha_bar_t) eps.
Tensor forward_diffuse_closed(const Tensor& z0, int t, const NoiseSchedule& sched,
                              const Tensor& eps);

// ---------------------------------------------------------------------------
// Toy multiview denoiser: two resolution levels with an attention block at the
// mid and up stages. Base stages are frozen after init; only the two attention
// blocks train.
// ---------------------------------------------------------------------------

struct DenoiserConfig {
  int latent_channels = 3;
  int hidden = 16;
  int height = 8, width = 8;  // latent resolution, divisible by 2
  int t_steps = 100;
  // The hidden width is wired as [tanh stage | linear latent taps | time taps]:
  // z_channels carry a frozen linear image of the noisy latent and t_channels
  // carry raw time-embedding rows, so the attention stages see both directly.
  int z_channels = 3;
  int t_channels = 4;
  EcaConfig eca;  // channels must equal hidden
  HarmonicConfig cond_harmonic{2, M_PI};

  int tanh_channels() const { return hidden - z_channels - t_channels; }
  std::size_t cond_raw_dim() const { return cond_harmonic.encoded_size(12) + latent_channels; }
  void validate() const;
};

struct ToyDenoiser {
  DenoiserConfig cfg;

  // Frozen base.
  LinearParams embed;      // latent -> hidden
  Tensor time_table;       // [T+1, hidden], sinusoidal in t/T
  LinearParams cond_proj;  // cond_raw -> hidden
  LinearParams down_proj;  // hidden -> hidden
  LinearParams mid_proj;   // hidden -> tanh_channels
  LinearParams up_proj;    // hidden -> tanh_channels
  LinearParams z_wire;     // latent -> z_channels, the linear latent tap
  LinearParams head;       // hidden -> latent

  // Trainable.
  EcaBlockParams eca_mid, eca_up;

  // Cached reprojection plans for the prepared layout.
  ViewLayout layout;
  std::vector<std::shared_ptr<const EcaPlan>> plans_mid, plans_up;

  /// Enumerates frozen base tensors (never updated by training).
  template <typename Fn>
  void for_each_frozen(Fn&& fn) {
    fn("embed.weight", embed.weight); fn("embed.bias", embed.bias);
    fn("time_table", time_table);
    fn("cond_proj.weight", cond_proj.weight); fn("cond_proj.bias", cond_proj.bias);
    fn("down_proj.weight", down_proj.weight); fn("down_proj.bias", down_proj.bias);
    fn("mid_proj.weight", mid_proj.weight); fn("mid_proj.bias", mid_proj.bias);
    fn("up_proj.weight", up_proj.weight); fn("up_proj.bias", up_proj.bias);
    fn("z_wire.weight", z_wire.weight); fn("z_wire.bias", z_wire.bias);
    fn("head.weight", head.weight); fn("head.bias", head.bias);
  }
};

/// Frozen stages drawn from rng (documented order), attention blocks from
/// init_eca_params; reprojection plans built for `layout`.
ToyDenoiser make_toy_denoiser(const DenoiserConfig& cfg, const ViewLayout& layout,
                              DeterministicRng& rng);

/// Conditioning vector for one target view: harmonic encoding of the relative
/// transform (input view -> target) concatenated with the channel-mean of the
/// input-view latent. Frozen plumbing; deterministic.
std::vector<double> condition_raw(const DenoiserConfig& cfg, const ViewLayout& layout,
                                  int input_view, int target_view, const Tensor& input_latent);

struct DenoiserContext;  // saved activations for the manual backward

/// Predicts per-view noise for the joint latent state z_t^{1:N}.
std::vector<Tensor> toy_denoiser_forward(const ToyDenoiser& d, const std::vector<Tensor>& z_t,
                                         int t, int input_view, const Tensor& input_latent,
                                         DenoiserContext* ctx = nullptr);

struct EcaParamGrads {
  EcaBlockParams mid, up;
};

/// Backward through the whole denoiser; returns gradients of the two attention
/// blocks (the only trainable tensors).
EcaParamGrads toy_denoiser_backward(const ToyDenoiser& d, const DenoiserContext& ctx,
                                    const std::vector<Tensor>& grad_eps);

struct LossContext {
  int t = 0;
  std::vector<Tensor> eps;      // per view
  std::vector<Tensor> eps_hat;  // per view
  std::shared_ptr<DenoiserContext> denoiser_ctx;
};

/// Deterministic loss core with explicit draws: mean squared error between eps
/// and the prediction over all views and elements.
double mvs_loss_fixed(const ToyDenoiser& d, const std::vector<Tensor>& z0, int t,
                      const std::vector<Tensor>& eps, const NoiseSchedule& sched, int input_view,
                      LossContext* ctx = nullptr);

/// Sampling wrapper: one shared t uniform in 1..T, independent per-view noise
/// (drawn in view order).
double mvs_loss(const ToyDenoiser& d, const std::vector<Tensor>& z0, const NoiseSchedule& sched,
                int input_view, DeterministicRng& rng, LossContext* ctx = nullptr);

/// Same MSE evaluated for an arbitrary predictor (used by oracle tests).
using DenoiseFn = std::function<std::vector<Tensor>(const std::vector<Tensor>& z_t, int t)>;
double mvs_loss_with(const DenoiseFn& fn, const std::vector<Tensor>& z0, int t,
                     const std::vector<Tensor>& eps, const NoiseSchedule& sched);

EcaParamGrads mvs_loss_backward(const ToyDenoiser& d, const LossContext& ctx);

// ---------------------------------------------------------------------------
// Training: plain SGD with momentum on the attention blocks only.
// ---------------------------------------------------------------------------

struct TrainerState {
  EcaBlockParams velocity_mid, velocity_up;
  double momentum = 0.9;
};

TrainerState make_trainer_state(const ToyDenoiser& d);

/// One step on a batch of multiview examples (gradients averaged over the
/// batch); returns the mean loss at the pre-update parameters. Per example the
/// draws are one shared t then per-view noise, consumed in batch order. Frozen
/// tensors are untouched.
double train_step(ToyDenoiser& d, const std::vector<std::vector<Tensor>>& batch,
                  const NoiseSchedule& sched, int input_view, double learning_rate,
                  DeterministicRng& rng, TrainerState& state);

// ---------------------------------------------------------------------------
// Ancestral DDPM sampling over joint view latents.
// ---------------------------------------------------------------------------

/// Standard posterior step from t=T down to 1. rng == nullptr suppresses the
/// posterior noise (the t=1 step never adds noise).
std::vector<Tensor> ancestral_sample(const DenoiseFn& fn, const NoiseSchedule& sched,
                                     const std::vector<std::size_t>& latent_shape, int n_views,
                                     DeterministicRng* rng);

/// Eq.-1-style entry point: joint multiview sampling conditioned on the input
/// view latent; the attention blocks couple the views at every step.
std::vector<Tensor> sample_multiview(const ToyDenoiser& d, const NoiseSchedule& sched,
                                     int input_view, const Tensor& input_latent,
                                     DeterministicRng& rng);

// ---------------------------------------------------------------------------
// Checkpoints: a directory of named ".etz" tensors plus a JSON manifest.
// ---------------------------------------------------------------------------

void save_denoiser(const ToyDenoiser& d, const std::string& dir);
ToyDenoiser load_denoiser(const std::string& dir);

}  // namespace epiray
