#include "epiray/diffusion.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "epiray/tensor_io.hpp"
#include "json.hpp"

namespace epiray {

NoiseSchedule linear_beta_schedule(int t_steps, double beta_start, double beta_end) {
  if (t_steps < 1) throw std::invalid_argument("linear_beta_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("linear_beta_schedule: need 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.t_steps = t_steps;
  s.beta.resize(t_steps);
  s.alpha.resize(t_steps);
  s.alpha_bar.resize(t_steps + 1);
  s.alpha_bar[0] = 1.0;
  for (int i = 0; i < t_steps; ++i) {
    s.beta[i] = t_steps == 1
                    ? beta_start
                    : beta_start + (beta_end - beta_start) * i / static_cast<double>(t_steps - 1);
    s.alpha[i] = 1.0 - s.beta[i];
    s.alpha_bar[i + 1] = s.alpha_bar[i] * s.alpha[i];
  }
  return s;
}

namespace {
void check_t(int t, const NoiseSchedule& sched, const char* op) {
  if (t < 1 || t > sched.t_steps) {
    throw std::invalid_argument(std::string(op) + ": t=" + std::to_string(t) +
                                " outside 1.." + std::to_string(sched.t_steps));
  }
}
}  // namespace

Tensor forward_diffuse_step(const Tensor& z_prev, int t, const NoiseSchedule& sched,
                            DeterministicRng& rng) {
  check_t(t, sched, "forward_diffuse_step");
  const double keep = std::sqrt(1.0 - sched.beta_at(t));
  const double add = std::sqrt(sched.beta_at(t));
  Tensor z(z_prev.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = keep * z_prev[i] + add * rng.normal();
  return z;
}

Tensor forward_diffuse_closed(const Tensor& z0, int t, const NoiseSchedule& sched,
                              const Tensor& eps) {
  check_t(t, sched, "forward_diffuse_closed");
  if (!z0.same_shape(eps)) throw_shape_mismatch("forward_diffuse_closed", z0.shape(), eps.shape());
  const double a = std::sqrt(sched.alpha_bar_at(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
  Tensor z(z0.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * z0[i] + b * eps[i];
  return z;
}

// ---------------------------------------------------------------------------

void DenoiserConfig::validate() const {
  if (latent_channels < 1 || hidden < 1) {
    throw std::invalid_argument("DenoiserConfig: channel widths must be >= 1");
  }
  if (z_channels < 1 || t_channels < 1 || tanh_channels() < 1) {
    throw std::invalid_argument("DenoiserConfig: need hidden > z_channels + t_channels >= 2");
  }
  if (height < 2 || width < 2 || height % 2 != 0 || width % 2 != 0) {
    throw std::invalid_argument("DenoiserConfig: latent size must be even and >= 2");
  }
  if (t_steps < 1) throw std::invalid_argument("DenoiserConfig: t_steps must be >= 1");
  if (eca.channels != hidden) {
    throw std::invalid_argument("DenoiserConfig: eca.channels must equal hidden");
  }
  eca.validate();
}

namespace {

Tensor sinusoidal_time_table(int t_steps, int hidden) {
  Tensor table({static_cast<std::size_t>(t_steps) + 1, static_cast<std::size_t>(hidden)});
  for (int t = 0; t <= t_steps; ++t) {
    const double tt = static_cast<double>(t) / t_steps;
    for (int c = 0; c < hidden; ++c) {
      const double freq = std::pow(2.0, c / 2) * M_PI;
      table[static_cast<std::size_t>(t) * hidden + c] =
          c % 2 == 0 ? std::sin(freq * tt) : std::cos(freq * tt);
    }
  }
  return table;
}

void tanh_inplace(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::tanh(t[i]);
}

// d(pre-activation) = d(out) * (1 - out^2), with `out` the saved tanh output.
Tensor tanh_backward(const Tensor& out, const Tensor& dout) {
  Tensor d(out.shape());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = dout[i] * (1.0 - out[i] * out[i]);
  return d;
}

Tensor avgpool2(const Tensor& x) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({h / 2, w / 2, c});
  for (std::size_t y = 0; y < h / 2; ++y) {
    for (std::size_t xx = 0; xx < w / 2; ++xx) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        out[(y * (w / 2) + xx) * c + ch] =
            0.25 * (x[((2 * y) * w + 2 * xx) * c + ch] + x[((2 * y) * w + 2 * xx + 1) * c + ch] +
                    x[((2 * y + 1) * w + 2 * xx) * c + ch] +
                    x[((2 * y + 1) * w + 2 * xx + 1) * c + ch]);
      }
    }
  }
  return out;
}

Tensor avgpool2_backward(const Tensor& dout, std::size_t h, std::size_t w) {
  const std::size_t c = dout.dim(2);
  Tensor dx({h, w, c});
  for (std::size_t y = 0; y < h / 2; ++y) {
    for (std::size_t xx = 0; xx < w / 2; ++xx) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = 0.25 * dout[(y * (w / 2) + xx) * c + ch];
        dx[((2 * y) * w + 2 * xx) * c + ch] = g;
        dx[((2 * y) * w + 2 * xx + 1) * c + ch] = g;
        dx[((2 * y + 1) * w + 2 * xx) * c + ch] = g;
        dx[((2 * y + 1) * w + 2 * xx + 1) * c + ch] = g;
      }
    }
  }
  return dx;
}

Tensor upsample2(const Tensor& x) {
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  Tensor out({2 * h, 2 * w, c});
  for (std::size_t y = 0; y < 2 * h; ++y) {
    for (std::size_t xx = 0; xx < 2 * w; ++xx) {
      std::memcpy(out.data() + (y * 2 * w + xx) * c, x.data() + ((y / 2) * w + xx / 2) * c,
                  c * sizeof(double));
    }
  }
  return out;
}

Tensor upsample2_backward(const Tensor& dout) {
  const std::size_t h2 = dout.dim(0), w2 = dout.dim(1), c = dout.dim(2);
  Tensor dx({h2 / 2, w2 / 2, c});
  for (std::size_t y = 0; y < h2; ++y) {
    for (std::size_t xx = 0; xx < w2; ++xx) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        dx[((y / 2) * (w2 / 2) + xx / 2) * c + ch] += dout[(y * w2 + xx) * c + ch];
      }
    }
  }
  return dx;
}

/// dx only (frozen layers do not need weight gradients).
Tensor linear_backward_input(const LinearParams& p, const Tensor& grad_out) {
  const std::size_t in = p.in_dim(), out = p.out_dim();
  const std::size_t rows = grad_out.size() / out;
  std::vector<std::size_t> shape = grad_out.shape();
  shape.back() = in;
  Tensor dx(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* g = grad_out.data() + r * out;
    double* d = dx.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      if (g[o] == 0.0) continue;
      const double* wrow = p.weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) d[i] += g[o] * wrow[i];
    }
  }
  return dx;
}

std::vector<Tensor*> tensor_list(EcaBlockParams& p) {
  std::vector<Tensor*> out;
  p.for_each([&](const char*, Tensor& t) { out.push_back(&t); });
  return out;
}

}  // namespace

struct DenoiserContext {
  int t = 0;
  std::vector<Tensor> a_up;  // per-view tanh slice of the up stage
  std::vector<EcaContext> mid_ctx, up_ctx;
};

ToyDenoiser make_toy_denoiser(const DenoiserConfig& cfg, const ViewLayout& layout,
                              DeterministicRng& rng) {
  cfg.validate();
  if (layout.size() < 1) throw std::invalid_argument("make_toy_denoiser: empty layout");
  if (static_cast<int>(layout.size()) < cfg.eca.k_views) {
    throw std::invalid_argument("make_toy_denoiser: layout smaller than K");
  }

  ToyDenoiser d;
  d.cfg = cfg;
  const std::size_t hid = static_cast<std::size_t>(cfg.hidden);
  const std::size_t ca = static_cast<std::size_t>(cfg.tanh_channels());
  // Frozen draws in a fixed order, then the two attention blocks.
  d.embed = xavier_init(rng, hid, static_cast<std::size_t>(cfg.latent_channels));
  d.cond_proj = xavier_init(rng, hid, cfg.cond_raw_dim());
  d.down_proj = xavier_init(rng, hid, hid);
  d.mid_proj = xavier_init(rng, ca, hid);
  d.up_proj = xavier_init(rng, ca, hid);
  d.z_wire = xavier_init(rng, static_cast<std::size_t>(cfg.z_channels),
                         static_cast<std::size_t>(cfg.latent_channels));
  d.head = xavier_init(rng, static_cast<std::size_t>(cfg.latent_channels), hid);
  d.time_table = sinusoidal_time_table(cfg.t_steps, cfg.hidden);
  d.eca_mid = init_eca_params(rng, cfg.eca);
  d.eca_up = init_eca_params(rng, cfg.eca);

  d.layout = layout;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    d.plans_mid.push_back(std::make_shared<const EcaPlan>(
        make_eca_plan(layout, static_cast<int>(i), cfg.height / 2, cfg.width / 2, cfg.eca)));
    d.plans_up.push_back(std::make_shared<const EcaPlan>(
        make_eca_plan(layout, static_cast<int>(i), cfg.height, cfg.width, cfg.eca)));
  }
  return d;
}

std::vector<double> condition_raw(const DenoiserConfig& cfg, const ViewLayout& layout,
                                  int input_view, int target_view, const Tensor& input_latent) {
  const CameraPose rel =
      relative_transform(layout.poses.at(input_view), layout.poses.at(target_view));
  double pose_vals[12];
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose_vals[r * 3 + c] = rel.R(r, c);
    pose_vals[9 + r] = rel.T(r);
  }
  std::vector<double> out(cfg.cond_raw_dim());
  harmonic_encode(pose_vals, 12, cfg.cond_harmonic, out.data());

  const std::size_t cl = static_cast<std::size_t>(cfg.latent_channels);
  const std::size_t pixels = input_latent.size() / cl;
  for (std::size_t c = 0; c < cl; ++c) {
    double acc = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) acc += input_latent[p * cl + c];
    out[cfg.cond_harmonic.encoded_size(12) + c] = acc / static_cast<double>(pixels);
  }
  return out;
}

std::vector<Tensor> toy_denoiser_forward(const ToyDenoiser& d, const std::vector<Tensor>& z_t,
                                         int t, int input_view, const Tensor& input_latent,
                                         DenoiserContext* ctx) {
  const DenoiserConfig& cfg = d.cfg;
  const std::size_t n = d.layout.size();
  if (z_t.size() != n) {
    throw std::invalid_argument("toy_denoiser_forward: " + std::to_string(z_t.size()) +
                                " latents for " + std::to_string(n) + " views");
  }
  const std::vector<std::size_t> want = {static_cast<std::size_t>(cfg.height),
                                         static_cast<std::size_t>(cfg.width),
                                         static_cast<std::size_t>(cfg.latent_channels)};
  for (const Tensor& z : z_t) {
    if (z.shape() != want) throw_shape_mismatch("toy_denoiser_forward", z.shape(), want);
  }
  if (t < 1 || t > cfg.t_steps) {
    throw std::invalid_argument("toy_denoiser_forward: t out of range");
  }

  DenoiserContext local;
  DenoiserContext& c = ctx ? *ctx : local;
  c.t = t;
  c.a_up.resize(n);
  c.mid_ctx.assign(n, {});
  c.up_ctx.assign(n, {});

  const std::size_t hid = static_cast<std::size_t>(cfg.hidden);
  const std::size_t ca = static_cast<std::size_t>(cfg.tanh_channels());
  const std::size_t cz = static_cast<std::size_t>(cfg.z_channels);
  const std::size_t ct = static_cast<std::size_t>(cfg.t_channels);
  const double* trow = d.time_table.data() + static_cast<std::size_t>(t) * hid;

  // Assembles [tanh stage | latent tap | time tap] feature maps.
  const auto wire = [&](const Tensor& act, const Tensor& z_tap) {
    Tensor out({act.dim(0), act.dim(1), hid});
    const std::size_t pixels = act.dim(0) * act.dim(1);
    for (std::size_t p = 0; p < pixels; ++p) {
      double* row = out.data() + p * hid;
      std::memcpy(row, act.data() + p * ca, ca * sizeof(double));
      std::memcpy(row + ca, z_tap.data() + p * cz, cz * sizeof(double));
      std::memcpy(row + ca + cz, trow, ct * sizeof(double));
    }
    return out;
  };

  std::vector<Tensor> h0(n), m(n), h2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> craw =
        condition_raw(cfg, d.layout, input_view, static_cast<int>(i), input_latent);
    std::vector<double> cvec(hid);
    linear_apply_vec(d.cond_proj, craw.data(), cvec.data());

    Tensor e = linear_forward(d.embed, z_t[i]);
    for (std::size_t p = 0; p < e.size() / hid; ++p) {
      double* row = e.data() + p * hid;
      for (std::size_t ch = 0; ch < hid; ++ch) row[ch] += trow[ch] + cvec[ch];
    }
    tanh_inplace(e);
    h0[i] = std::move(e);

    Tensor h1 = linear_forward(d.down_proj, avgpool2(h0[i]));
    tanh_inplace(h1);
    Tensor a_mid = linear_forward(d.mid_proj, h1);
    tanh_inplace(a_mid);
    m[i] = wire(a_mid, linear_forward(d.z_wire, avgpool2(z_t[i])));
  }

  std::vector<Tensor> mids(n);
  for (std::size_t i = 0; i < n; ++i) {
    mids[i] = eca_forward_planned(m, d.plans_mid[i], cfg.eca, d.eca_mid, &c.mid_ctx[i]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    Tensor u = upsample2(mids[i]);
    u += h0[i];  // skip connection keeps full-resolution detail at the head
    Tensor a_up = linear_forward(d.up_proj, u);
    tanh_inplace(a_up);
    c.a_up[i] = a_up;
    h2[i] = wire(a_up, linear_forward(d.z_wire, z_t[i]));
  }

  std::vector<Tensor> eps_hat(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor u2 = eca_forward_planned(h2, d.plans_up[i], cfg.eca, d.eca_up, &c.up_ctx[i]);
    eps_hat[i] = linear_forward(d.head, u2);
  }
  return eps_hat;
}

EcaParamGrads toy_denoiser_backward(const ToyDenoiser& d, const DenoiserContext& ctx,
                                    const std::vector<Tensor>& grad_eps) {
  const DenoiserConfig& cfg = d.cfg;
  const std::size_t n = d.layout.size();
  if (grad_eps.size() != n || ctx.a_up.size() != n) {
    throw std::invalid_argument("toy_denoiser_backward: context/gradient mismatch");
  }
  const std::size_t h = static_cast<std::size_t>(cfg.height);
  const std::size_t w = static_cast<std::size_t>(cfg.width);
  const std::size_t hid = static_cast<std::size_t>(cfg.hidden);
  const std::size_t ca = static_cast<std::size_t>(cfg.tanh_channels());

  EcaParamGrads grads{zero_eca_params(cfg.eca), zero_eca_params(cfg.eca)};

  // Head, then the up-level attention (accumulates into every view's h2 grad).
  std::vector<Tensor> d_h2(n, Tensor({h, w, hid}));
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor du = linear_backward_input(d.head, grad_eps[i]);
    eca_backward_acc(ctx.up_ctx[i], cfg.eca, d.eca_up, du.reshaped({h * w, hid}), grads.up, d_h2);
  }

  // Up stage back to the mid-attention outputs. Only the tanh slice reaches
  // trainable tensors; the latent/time taps end in frozen wiring.
  std::vector<Tensor> d_mid_out(n);
  for (std::size_t j = 0; j < n; ++j) {
    Tensor d_a({h, w, ca});
    for (std::size_t p = 0; p < h * w; ++p) {
      std::memcpy(d_a.data() + p * ca, d_h2[j].data() + p * hid, ca * sizeof(double));
    }
    const Tensor dpre = tanh_backward(ctx.a_up[j], d_a);
    const Tensor du = linear_backward_input(d.up_proj, dpre);
    d_mid_out[j] = upsample2_backward(du);
    // The skip branch ends in frozen stages; no trainable tensors below it.
  }

  std::vector<Tensor> d_m(n, Tensor({h / 2, w / 2, hid}));
  for (std::size_t i = 0; i < n; ++i) {
    eca_backward_acc(ctx.mid_ctx[i], cfg.eca, d.eca_mid,
                     d_mid_out[i].reshaped({(h / 2) * (w / 2), hid}), grads.mid, d_m);
  }
  // Everything below the mid attention is frozen.
  return grads;
}

double mvs_loss_with(const DenoiseFn& fn, const std::vector<Tensor>& z0, int t,
                     const std::vector<Tensor>& eps, const NoiseSchedule& sched) {
  if (z0.size() != eps.size()) {
    throw std::invalid_argument("mvs_loss_with: z0/eps count mismatch");
  }
  std::vector<Tensor> z_t(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    z_t[i] = forward_diffuse_closed(z0[i], t, sched, eps[i]);
  }
  const std::vector<Tensor> pred = fn(z_t, t);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    if (!pred[i].same_shape(eps[i])) {
      throw_shape_mismatch("mvs_loss_with", pred[i].shape(), eps[i].shape());
    }
    for (std::size_t e = 0; e < eps[i].size(); ++e) {
      const double diff = pred[i][e] - eps[i][e];
      acc += diff * diff;
    }
    count += eps[i].size();
  }
  return acc / static_cast<double>(count);
}

double mvs_loss_fixed(const ToyDenoiser& d, const std::vector<Tensor>& z0, int t,
                      const std::vector<Tensor>& eps, const NoiseSchedule& sched, int input_view,
                      LossContext* ctx) {
  if (z0.size() != d.layout.size() || eps.size() != z0.size()) {
    throw std::invalid_argument("mvs_loss_fixed: need one z0 and eps per view");
  }
  std::vector<Tensor> z_t(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    z_t[i] = forward_diffuse_closed(z0[i], t, sched, eps[i]);
  }

  auto dctx = std::make_shared<DenoiserContext>();
  const std::vector<Tensor> pred =
      toy_denoiser_forward(d, z_t, t, input_view, z0[input_view], dctx.get());

  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    for (std::size_t e = 0; e < eps[i].size(); ++e) {
      const double diff = pred[i][e] - eps[i][e];
      acc += diff * diff;
    }
    count += eps[i].size();
  }
  if (ctx) {
    ctx->t = t;
    ctx->eps = eps;
    ctx->eps_hat = pred;
    ctx->denoiser_ctx = dctx;
  }
  return acc / static_cast<double>(count);
}

double mvs_loss(const ToyDenoiser& d, const std::vector<Tensor>& z0, const NoiseSchedule& sched,
                int input_view, DeterministicRng& rng, LossContext* ctx) {
  // Draw order: shared t, then per-view noise in view order.
  const int t = 1 + std::min<int>(sched.t_steps - 1,
                                  static_cast<int>(rng.uniform() * sched.t_steps));
  std::vector<Tensor> eps(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) {
    eps[i] = Tensor(z0[i].shape());
    rng.fill_normal(eps[i]);
  }
  return mvs_loss_fixed(d, z0, t, eps, sched, input_view, ctx);
}

EcaParamGrads mvs_loss_backward(const ToyDenoiser& d, const LossContext& ctx) {
  if (!ctx.denoiser_ctx) throw std::invalid_argument("mvs_loss_backward: missing context");
  std::size_t count = 0;
  for (const Tensor& e : ctx.eps) count += e.size();
  std::vector<Tensor> grad_eps(ctx.eps.size());
  for (std::size_t i = 0; i < ctx.eps.size(); ++i) {
    grad_eps[i] = scale(ctx.eps_hat[i] - ctx.eps[i], 2.0 / static_cast<double>(count));
  }
  return toy_denoiser_backward(d, *ctx.denoiser_ctx, grad_eps);
}

TrainerState make_trainer_state(const ToyDenoiser& d) {
  TrainerState s;
  s.velocity_mid = zero_eca_params(d.cfg.eca);
  s.velocity_up = zero_eca_params(d.cfg.eca);
  return s;
}

double train_step(ToyDenoiser& d, const std::vector<std::vector<Tensor>>& batch,
                  const NoiseSchedule& sched, int input_view, double learning_rate,
                  DeterministicRng& rng, TrainerState& state) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  EcaParamGrads total{zero_eca_params(d.cfg.eca), zero_eca_params(d.cfg.eca)};
  double loss_sum = 0.0;
  for (const std::vector<Tensor>& z0 : batch) {
    LossContext ctx;
    loss_sum += mvs_loss(d, z0, sched, input_view, rng, &ctx);
    EcaParamGrads grads = mvs_loss_backward(d, ctx);
    const double w = 1.0 / static_cast<double>(batch.size());
    for (auto [dst, src] : {std::pair(&total.mid, &grads.mid), std::pair(&total.up, &grads.up)}) {
      const std::vector<Tensor*> a = tensor_list(*dst);
      const std::vector<Tensor*> b = tensor_list(*src);
      for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t e = 0; e < a[i]->size(); ++e) (*a[i])[e] += w * (*b[i])[e];
      }
    }
  }

  auto update = [&](EcaBlockParams& params, EcaBlockParams& grad, EcaBlockParams& vel) {
    const std::vector<Tensor*> p = tensor_list(params);
    const std::vector<Tensor*> g = tensor_list(grad);
    const std::vector<Tensor*> v = tensor_list(vel);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t e = 0; e < p[i]->size(); ++e) {
        (*v[i])[e] = state.momentum * (*v[i])[e] - learning_rate * (*g[i])[e];
        (*p[i])[e] += (*v[i])[e];
      }
    }
  };
  update(d.eca_mid, total.mid, state.velocity_mid);
  update(d.eca_up, total.up, state.velocity_up);
  return loss_sum / static_cast<double>(batch.size());
}

std::vector<Tensor> ancestral_sample(const DenoiseFn& fn, const NoiseSchedule& sched,
                                     const std::vector<std::size_t>& latent_shape, int n_views,
                                     DeterministicRng* rng) {
  // Draw order: initial noise per view, then per step the posterior noise per
  // view (t = T..2; the final step adds none).
  std::vector<Tensor> z(n_views, Tensor(latent_shape));
  if (rng) {
    for (Tensor& zi : z) rng->fill_normal(zi);
  }

  for (int t = sched.t_steps; t >= 1; --t) {
    const std::vector<Tensor> eps_hat = fn(z, t);
    const double a = sched.alpha_at(t);
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t - 1);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    const double noise_coef = sched.beta_at(t) / std::sqrt(1.0 - ab);
    const double sigma =
        t > 1 ? std::sqrt(sched.beta_at(t) * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;

    for (int i = 0; i < n_views; ++i) {
      Tensor& zi = z[i];
      const Tensor& ei = eps_hat[i];
      for (std::size_t e = 0; e < zi.size(); ++e) {
        double mu = inv_sqrt_a * (zi[e] - noise_coef * ei[e]);
        if (sigma > 0.0 && rng) mu += sigma * rng->normal();
        zi[e] = mu;
      }
    }
  }
  return z;
}

std::vector<Tensor> sample_multiview(const ToyDenoiser& d, const NoiseSchedule& sched,
                                     int input_view, const Tensor& input_latent,
                                     DeterministicRng& rng) {
  if (sched.t_steps > d.cfg.t_steps) {
    throw std::invalid_argument("sample_multiview: schedule longer than the time table");
  }
  const std::vector<std::size_t> shape = {static_cast<std::size_t>(d.cfg.height),
                                          static_cast<std::size_t>(d.cfg.width),
                                          static_cast<std::size_t>(d.cfg.latent_channels)};
  DenoiseFn fn = [&](const std::vector<Tensor>& z_t, int t) {
    return toy_denoiser_forward(d, z_t, t, input_view, input_latent);
  };
  return ancestral_sample(fn, sched, shape, static_cast<int>(d.layout.size()), &rng);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::pair<std::string, Tensor*>> checkpoint_tensors(ToyDenoiser& d) {
  std::vector<std::pair<std::string, Tensor*>> out;
  d.for_each_frozen([&](const char* name, Tensor& t) { out.push_back({name, &t}); });
  d.eca_mid.for_each(
      [&](const char* name, Tensor& t) { out.push_back({std::string("eca_mid.") + name, &t}); });
  d.eca_up.for_each(
      [&](const char* name, Tensor& t) { out.push_back({std::string("eca_up.") + name, &t}); });
  return out;
}

nlohmann::json config_json(const DenoiserConfig& cfg) {
  return {{"latent_channels", cfg.latent_channels},
          {"hidden", cfg.hidden},
          {"height", cfg.height},
          {"width", cfg.width},
          {"t_steps", cfg.t_steps},
          {"z_channels", cfg.z_channels},
          {"t_channels", cfg.t_channels},
          {"cond_harmonic_l", cfg.cond_harmonic.num_frequencies},
          {"cond_harmonic_base", cfg.cond_harmonic.base_frequency},
          {"eca",
           {{"k_views", cfg.eca.k_views},
            {"s_samples", cfg.eca.s_samples},
            {"channels", cfg.eca.channels},
            {"near", cfg.eca.near},
            {"far", cfg.eca.far},
            {"harmonic_l", cfg.eca.harmonic.num_frequencies},
            {"harmonic_base", cfg.eca.harmonic.base_frequency}}}};
}

DenoiserConfig config_from_json(const nlohmann::json& j) {
  DenoiserConfig cfg;
  cfg.latent_channels = j.at("latent_channels").get<int>();
  cfg.hidden = j.at("hidden").get<int>();
  cfg.height = j.at("height").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.t_steps = j.at("t_steps").get<int>();
  cfg.z_channels = j.at("z_channels").get<int>();
  cfg.t_channels = j.at("t_channels").get<int>();
  cfg.cond_harmonic.num_frequencies = j.at("cond_harmonic_l").get<int>();
  cfg.cond_harmonic.base_frequency = j.at("cond_harmonic_base").get<double>();
  const auto& e = j.at("eca");
  cfg.eca.k_views = e.at("k_views").get<int>();
  cfg.eca.s_samples = e.at("s_samples").get<int>();
  cfg.eca.channels = e.at("channels").get<int>();
  cfg.eca.near = e.at("near").get<double>();
  cfg.eca.far = e.at("far").get<double>();
  cfg.eca.harmonic.num_frequencies = e.at("harmonic_l").get<int>();
  cfg.eca.harmonic.base_frequency = e.at("harmonic_base").get<double>();
  return cfg;
}

}  // namespace

void save_denoiser(const ToyDenoiser& d, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  const std::string layout_path = (fs::path(dir) / "cameras.json").string();
  write_layout_json(d.layout, layout_path);

  nlohmann::json tensors = nlohmann::json::array();
  ToyDenoiser& mut = const_cast<ToyDenoiser&>(d);
  for (auto& [name, tensor] : checkpoint_tensors(mut)) {
    const std::string file = name + ".etz";
    tensor_write(*tensor, (fs::path(dir) / file).string());
    tensors.push_back({{"name", name}, {"shape", tensor->shape()}, {"file", file}});
  }

  nlohmann::json manifest = {{"format", "epiray-checkpoint"},
                             {"version", 1},
                             {"config", config_json(d.cfg)},
                             {"cameras", "cameras.json"},
                             {"tensors", tensors}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  if (!out) throw std::runtime_error("save_denoiser: cannot write manifest in " + dir);
  out << manifest.dump(2) << "\n";
}

ToyDenoiser load_denoiser(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw std::runtime_error("load_denoiser: cannot open manifest in " + dir);
  nlohmann::json manifest;
  in >> manifest;
  if (manifest.value("format", "") != "epiray-checkpoint") {
    throw std::runtime_error("load_denoiser: not an epiray checkpoint");
  }

  const DenoiserConfig cfg = config_from_json(manifest.at("config"));
  const ViewLayout layout =
      read_layout_json((fs::path(dir) / manifest.at("cameras").get<std::string>()).string());

  DeterministicRng rng(0);  // placeholder values, overwritten below
  ToyDenoiser d = make_toy_denoiser(cfg, layout, rng);

  std::size_t loaded = 0;
  auto named = checkpoint_tensors(d);
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<std::size_t> shape = entry.at("shape").get<std::vector<std::size_t>>();
    Tensor t = tensor_read((fs::path(dir) / entry.at("file").get<std::string>()).string());
    if (t.shape() != shape) {
      throw std::runtime_error("load_denoiser: shape mismatch for " + name);
    }
    bool found = false;
    for (auto& [n, ptr] : named) {
      if (n == name) {
        if (ptr->shape() != t.shape()) {
          throw std::runtime_error("load_denoiser: unexpected shape for " + name);
        }
        *ptr = std::move(t);
        found = true;
        ++loaded;
        break;
      }
    }
    if (!found) throw std::runtime_error("load_denoiser: unknown tensor " + name);
  }
  if (loaded != named.size()) {
    throw std::runtime_error("load_denoiser: checkpoint is missing tensors");
  }
  return d;
}

}  // namespace epiray
