#include "epiray/eca.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace epiray {

void EcaConfig::validate() const {
  if (k_views < 1 || s_samples < 1 || channels < 1) {
    throw std::invalid_argument("EcaConfig: K, S, C must all be >= 1");
  }
  if (!(near > 0.0) || !(far > near)) throw std::invalid_argument("EcaConfig: need 0 < near < far");
  if (harmonic.num_frequencies < 1) throw std::invalid_argument("EcaConfig: harmonic L must be >= 1");
}

EcaBlockParams init_eca_params(DeterministicRng& rng, const EcaConfig& cfg) {
  cfg.validate();
  const std::size_t c = static_cast<std::size_t>(cfg.channels);
  const std::size_t enc = cfg.harmonic.encoded_size(6);

  // Draw order is fixed: cross q,k,v,out; self q,k,v,out; ray_proj; fusion.
  EcaBlockParams p;
  p.cross_q = xavier_init(rng, c, c);
  p.cross_k = xavier_init(rng, c, c);
  p.cross_v = xavier_init(rng, c, c);
  p.cross_out = xavier_init(rng, c, c);
  p.self_q = xavier_init(rng, c, c);
  p.self_k = xavier_init(rng, c, c);
  p.self_v = xavier_init(rng, c, c);
  p.self_out = xavier_init(rng, c, c);
  p.ray_proj = xavier_init(rng, c, enc);
  p.fusion = xavier_init(rng, 1, c);
  p.final_out = LinearParams(c, c);  // exactly zero
  return p;
}

EcaBlockParams zero_eca_params(const EcaConfig& cfg) {
  cfg.validate();
  const std::size_t c = static_cast<std::size_t>(cfg.channels);
  const std::size_t enc = cfg.harmonic.encoded_size(6);
  EcaBlockParams p;
  p.cross_q = LinearParams(c, c);
  p.cross_k = LinearParams(c, c);
  p.cross_v = LinearParams(c, c);
  p.cross_out = LinearParams(c, c);
  p.self_q = LinearParams(c, c);
  p.self_k = LinearParams(c, c);
  p.self_v = LinearParams(c, c);
  p.self_out = LinearParams(c, c);
  p.ray_proj = LinearParams(c, enc);
  p.fusion = LinearParams(1, c);
  p.final_out = LinearParams(c, c);
  return p;
}

EcaPlan make_eca_plan(const ViewLayout& layout, int target_index, int feat_h, int feat_w,
                      const EcaConfig& cfg) {
  cfg.validate();
  EcaPlan plan;
  plan.geo = build_sample_geometry(target_index, layout, feat_h, feat_w, cfg.k_views,
                                   cfg.s_samples, cfg.near, cfg.far);

  const SampleGeometry& geo = plan.geo;
  const std::size_t kk = geo.k_views();
  const std::size_t enc = cfg.harmonic.encoded_size(6);
  plan.harmonic = Tensor({kk, geo.pixels, geo.s_samples, enc});

  // For every (view k, target pixel p, depth s): the ray from camera k through
  // the sample point, canonicalized in the target pixel's ray frame, as
  // harmonic-encoded Plucker coordinates.
  const CameraPose& target_pose = layout.poses[target_index];
  for (std::size_t p = 0; p < geo.pixels; ++p) {
    const Ray& tray = geo.target_rays[p];
    const CanonicalFrame frame = canonical_transform(target_pose, tray.dir);
    for (std::size_t k = 0; k < kk; ++k) {
      const Eigen::Vector3d ck = layout.poses[geo.view_indices[k]].center();
      for (std::size_t s = 0; s < geo.s_samples; ++s) {
        const Eigen::Vector3d x = tray.point_at(geo.depths[p * geo.s_samples + s]);
        Eigen::Vector3d dir = x - ck;
        // A sample at the camera center has no direction; such samples are
        // invalid and masked, but the encoding must stay finite.
        dir = dir.norm() < 1e-12 ? tray.dir : dir.normalized();
        const Ray canon = frame.apply({ck, dir});
        const PluckerRay pl = plucker_coordinates(canon);
        const double six[6] = {pl.m.x(), pl.m.y(), pl.m.z(), pl.d.x(), pl.d.y(), pl.d.z()};
        harmonic_encode(six, 6, cfg.harmonic,
                        plan.harmonic.data() + ((k * geo.pixels + p) * geo.s_samples + s) * enc);
      }
    }
  }
  return plan;
}

namespace {

void check_volume_shape(const Tensor& volume, const Tensor& valid, const EcaConfig& cfg) {
  if (volume.rank() != 4 || volume.dim(0) != static_cast<std::size_t>(cfg.k_views) ||
      volume.dim(2) != static_cast<std::size_t>(cfg.s_samples) ||
      volume.dim(3) != static_cast<std::size_t>(cfg.channels)) {
    throw std::invalid_argument("near_views_cross_attention: volume " +
                                shape_to_string(volume.shape()) + " does not match config");
  }
  if (valid.rank() != 3 || valid.dim(0) != volume.dim(0) || valid.dim(1) != volume.dim(1) ||
      valid.dim(2) != volume.dim(2)) {
    throw_shape_mismatch("near_views_cross_attention", valid.shape(), volume.shape());
  }
}

Tensor copy_prefix(const Tensor& t, std::size_t count, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape));
  std::memcpy(out.data(), t.data(), count * sizeof(double));
  return out;
}

Tensor copy_suffix(const Tensor& t, std::size_t offset, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape));
  std::memcpy(out.data(), t.data() + offset, out.size() * sizeof(double));
  return out;
}

// Softmax over a scalar row with explicit validity; rows with no admissible
// entry return false (caller substitutes).
bool masked_softmax_row(const double* logits, const std::uint8_t* keep, std::size_t n,
                        double* probs) {
  double mx = -1.0;
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (keep[j] && (!any || logits[j] > mx)) {
      mx = logits[j];
      any = true;
    }
  }
  if (!any) {
    for (std::size_t j = 0; j < n; ++j) probs[j] = 0.0;
    return false;
  }
  double denom = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    probs[j] = keep[j] ? std::exp(logits[j] - mx) : 0.0;
    denom += probs[j];
  }
  for (std::size_t j = 0; j < n; ++j) probs[j] /= denom;
  return true;
}

void softmax_backward_row(const double* probs, const double* dprobs, std::size_t n,
                          double* dlogits) {
  double inner = 0.0;
  for (std::size_t j = 0; j < n; ++j) inner += probs[j] * dprobs[j];
  for (std::size_t j = 0; j < n; ++j) dlogits[j] = probs[j] * (dprobs[j] - inner);
}

}  // namespace

Tensor near_views_cross_attention(const Tensor& injected_volume, const Tensor& valid,
                                  const EcaBlockParams& params, const EcaConfig& cfg,
                                  CrossAttnContext* ctx) {
  check_volume_shape(injected_volume, valid, cfg);
  const std::size_t kk = injected_volume.dim(0);
  const std::size_t pixels = injected_volume.dim(1);
  const std::size_t ss = injected_volume.dim(2);
  const std::size_t ch = injected_volume.dim(3);

  Tensor vol0 = copy_prefix(injected_volume, pixels * ss * ch, {pixels, ss, ch});
  if (ctx) {
    ctx->injected = injected_volume;
    ctx->fully_masked.clear();
  }
  if (kk == 1) {
    // No reference views: pure passthrough of the target slice.
    if (ctx) ctx->weights = Tensor();
    return vol0;
  }

  const std::size_t m = (kk - 1) * ss;  // keys per (pixel, sample)
  Tensor rest =
      copy_suffix(injected_volume, pixels * ss * ch, {kk - 1, pixels, ss, ch});

  Tensor q = linear_forward(params.cross_q, vol0);
  Tensor key = linear_forward(params.cross_k, rest);
  Tensor val = linear_forward(params.cross_v, rest);

  Tensor weights({pixels, ss, m});
  std::vector<std::uint8_t> flags(pixels * ss, 0);
  Tensor attn({pixels, ss, ch});
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(ch));

  std::vector<double> logits(m);
  std::vector<std::uint8_t> keep(m);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t k1 = j / ss, sp = j % ss;
      keep[j] = valid[((k1 + 1) * pixels + p) * ss + sp] != 0.0 ? 1 : 0;
    }
    for (std::size_t s = 0; s < ss; ++s) {
      const double* qrow = q.data() + (p * ss + s) * ch;
      for (std::size_t j = 0; j < m; ++j) {
        if (!keep[j]) {
          logits[j] = 0.0;
          continue;
        }
        const std::size_t k1 = j / ss, sp = j % ss;
        const double* krow = key.data() + ((k1 * pixels + p) * ss + sp) * ch;
        double acc = 0.0;
        for (std::size_t c = 0; c < ch; ++c) acc += qrow[c] * krow[c];
        logits[j] = acc * inv_sqrt_c;
      }
      double* wrow = weights.data() + (p * ss + s) * m;
      double* arow = attn.data() + (p * ss + s) * ch;
      if (!masked_softmax_row(logits.data(), keep.data(), m, wrow)) {
        // Every reference sample is out of frustum: fall back to the value
        // projection of the query's own features.
        flags[p * ss + s] = 1;
        linear_apply_vec(params.cross_v, vol0.data() + (p * ss + s) * ch, arow);
        continue;
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (wrow[j] == 0.0) continue;
        const std::size_t k1 = j / ss, sp = j % ss;
        const double* vrow = val.data() + ((k1 * pixels + p) * ss + sp) * ch;
        for (std::size_t c = 0; c < ch; ++c) arow[c] += wrow[j] * vrow[c];
      }
    }
  }

  Tensor out = vol0;
  Tensor projected = linear_forward(params.cross_out, attn);
  out += projected;

  if (ctx) {
    ctx->q = std::move(q);
    ctx->k = std::move(key);
    ctx->v = std::move(val);
    ctx->weights = std::move(weights);
    ctx->fully_masked = std::move(flags);
    ctx->attn = std::move(attn);
  }
  return out;
}

Tensor ray_self_attention(const Tensor& v_tilde, const EcaBlockParams& params,
                          SelfAttnContext* ctx) {
  if (v_tilde.rank() != 3) {
    throw std::invalid_argument("ray_self_attention: need [P,S,C], got " +
                                shape_to_string(v_tilde.shape()));
  }
  const std::size_t pixels = v_tilde.dim(0), ss = v_tilde.dim(1), ch = v_tilde.dim(2);
  if (params.self_q.in_dim() != ch) {
    throw_shape_mismatch("ray_self_attention", v_tilde.shape(), params.self_q.weight.shape());
  }

  Tensor q = linear_forward(params.self_q, v_tilde);
  Tensor k = linear_forward(params.self_k, v_tilde);
  Tensor v = linear_forward(params.self_v, v_tilde);

  Tensor weights({pixels, ss, ss});
  Tensor attn({pixels, ss, ch});
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(ch));
  std::vector<double> logits(ss);

  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t s = 0; s < ss; ++s) {
      const double* qrow = q.data() + (p * ss + s) * ch;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < ss; ++t) {
        const double* krow = k.data() + (p * ss + t) * ch;
        double acc = 0.0;
        for (std::size_t c = 0; c < ch; ++c) acc += qrow[c] * krow[c];
        logits[t] = acc * inv_sqrt_c;
        mx = std::max(mx, logits[t]);
      }
      double* wrow = weights.data() + (p * ss + s) * ss;
      double denom = 0.0;
      for (std::size_t t = 0; t < ss; ++t) {
        wrow[t] = std::exp(logits[t] - mx);
        denom += wrow[t];
      }
      double* arow = attn.data() + (p * ss + s) * ch;
      for (std::size_t t = 0; t < ss; ++t) {
        wrow[t] /= denom;
        const double* vrow = v.data() + (p * ss + t) * ch;
        for (std::size_t c = 0; c < ch; ++c) arow[c] += wrow[t] * vrow[c];
      }
    }
  }

  Tensor out = v_tilde;
  out += linear_forward(params.self_out, attn);

  if (ctx) {
    ctx->input = v_tilde;
    ctx->q = std::move(q);
    ctx->k = std::move(k);
    ctx->v = std::move(v);
    ctx->weights = std::move(weights);
    ctx->attn = std::move(attn);
  }
  return out;
}

Tensor fuse_ray_to_pixel(const Tensor& v_bar, const EcaBlockParams& params, FuseContext* ctx) {
  if (v_bar.rank() != 3) {
    throw std::invalid_argument("fuse_ray_to_pixel: need [P,S,C], got " +
                                shape_to_string(v_bar.shape()));
  }
  const std::size_t pixels = v_bar.dim(0), ss = v_bar.dim(1), ch = v_bar.dim(2);
  if (params.fusion.in_dim() != ch || params.fusion.out_dim() != 1) {
    throw_shape_mismatch("fuse_ray_to_pixel", v_bar.shape(), params.fusion.weight.shape());
  }

  Tensor logits = linear_forward(params.fusion, v_bar).reshaped({pixels, ss});
  Tensor weights({pixels, ss});
  Tensor fused({pixels, ch});
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* lrow = logits.data() + p * ss;
    double* wrow = weights.data() + p * ss;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < ss; ++s) mx = std::max(mx, lrow[s]);
    double denom = 0.0;
    for (std::size_t s = 0; s < ss; ++s) {
      wrow[s] = std::exp(lrow[s] - mx);
      denom += wrow[s];
    }
    double* frow = fused.data() + p * ch;
    for (std::size_t s = 0; s < ss; ++s) {
      wrow[s] /= denom;
      const double* vrow = v_bar.data() + (p * ss + s) * ch;
      for (std::size_t c = 0; c < ch; ++c) frow[c] += wrow[s] * vrow[c];
    }
  }

  if (ctx) {
    ctx->input = v_bar;
    ctx->weights = std::move(weights);
  }
  return fused;
}

Tensor eca_forward(const std::vector<Tensor>& feature_maps, const ViewLayout& layout,
                   int target_index, const EcaConfig& cfg, const EcaBlockParams& params,
                   EcaContext* ctx) {
  if (feature_maps.size() != layout.size()) {
    throw std::invalid_argument("eca_forward: " + std::to_string(feature_maps.size()) +
                                " maps for " + std::to_string(layout.size()) + " views");
  }
  if (feature_maps.empty() || feature_maps.front().rank() != 3) {
    throw std::invalid_argument("eca_forward: maps must be [H,W,C]");
  }
  auto plan = std::make_shared<EcaPlan>(
      make_eca_plan(layout, target_index, static_cast<int>(feature_maps.front().dim(0)),
                    static_cast<int>(feature_maps.front().dim(1)), cfg));
  return eca_forward_planned(feature_maps, std::move(plan), cfg, params, ctx);
}

Tensor eca_forward_planned(const std::vector<Tensor>& feature_maps,
                           std::shared_ptr<const EcaPlan> plan, const EcaConfig& cfg,
                           const EcaBlockParams& params, EcaContext* ctx) {
  cfg.validate();
  const SampleGeometry& geo = plan->geo;
  const Tensor& target_map = feature_maps.at(geo.target_index);
  if (target_map.dim(2) != static_cast<std::size_t>(cfg.channels)) {
    throw std::invalid_argument("eca_forward: map channels " + std::to_string(target_map.dim(2)) +
                                " != config C " + std::to_string(cfg.channels));
  }

  Tensor raw = gather_volume(geo, feature_maps);
  Tensor injected = raw;
  injected += linear_forward(params.ray_proj, plan->harmonic);

  EcaContext local;
  EcaContext& c = ctx ? *ctx : local;
  c.plan = plan;
  c.n_views = feature_maps.size();
  c.channels = static_cast<std::size_t>(cfg.channels);
  c.raw_volume = std::move(raw);

  const Tensor v_tilde = near_views_cross_attention(injected, geo.valid, params, cfg, &c.cross);
  const Tensor v_bar = ray_self_attention(v_tilde, params, &c.self_attn);
  c.fused = fuse_ray_to_pixel(v_bar, params, &c.fuse);

  const Tensor delta = linear_forward(params.final_out, c.fused);

  // Residual add that returns the target map bit-exactly when delta vanishes
  // (the zero-initialized final projection makes a fresh block an identity).
  Tensor out = target_map;
  double* po = out.data();
  const double* pd = delta.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (pd[i] != 0.0) po[i] += pd[i];
  }
  return out;
}

void eca_backward_acc(const EcaContext& ctx, const EcaConfig& cfg, const EcaBlockParams& params,
                      const Tensor& grad_out, EcaBlockParams& param_grads,
                      std::vector<Tensor>& map_grads) {
  if (!ctx.plan) throw std::invalid_argument("eca_backward: missing forward context");
  const SampleGeometry& geo = ctx.plan->geo;
  const std::size_t pixels = geo.pixels, ss = geo.s_samples, ch = ctx.channels;
  const std::size_t kk = geo.k_views();
  if (grad_out.size() != pixels * ch) {
    throw_shape_mismatch("eca_backward", grad_out.shape(), {pixels, ch});
  }
  if (map_grads.size() != ctx.n_views) {
    throw std::invalid_argument("eca_backward: map_grads size mismatch");
  }
  const Tensor dout = grad_out.reshaped({pixels, ch});

  // Residual onto the target map.
  map_grads[geo.target_index] += dout.reshaped(map_grads[geo.target_index].shape());

  // Final projection.
  Tensor dfused({pixels, ch});
  linear_backward_acc(params.final_out, ctx.fused, dout, &dfused, param_grads.final_out.weight,
                      param_grads.final_out.bias);

  // Fusion backward.
  const Tensor& v_bar = ctx.fuse.input;
  Tensor dv_bar({pixels, ss, ch});
  {
    std::vector<double> dw(ss), dl(ss);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* frow = dfused.data() + p * ch;
      const double* wrow = ctx.fuse.weights.data() + p * ss;
      for (std::size_t s = 0; s < ss; ++s) {
        const double* vrow = v_bar.data() + (p * ss + s) * ch;
        double* drow = dv_bar.data() + (p * ss + s) * ch;
        double acc = 0.0;
        for (std::size_t c = 0; c < ch; ++c) {
          drow[c] += wrow[s] * frow[c];
          acc += frow[c] * vrow[c];
        }
        dw[s] = acc;
      }
      softmax_backward_row(wrow, dw.data(), ss, dl.data());
      for (std::size_t s = 0; s < ss; ++s) {
        linear_backward_vec(params.fusion, v_bar.data() + (p * ss + s) * ch, &dl[s],
                            dv_bar.data() + (p * ss + s) * ch, param_grads.fusion.weight,
                            param_grads.fusion.bias);
      }
    }
  }

  // Ray self-attention backward.
  const SelfAttnContext& sa = ctx.self_attn;
  Tensor dv_tilde = dv_bar;  // residual path
  {
    Tensor dattn({pixels, ss, ch});
    linear_backward_acc(params.self_out, sa.attn, dv_bar, &dattn, param_grads.self_out.weight,
                        param_grads.self_out.bias);

    Tensor dq({pixels, ss, ch}), dk({pixels, ss, ch}), dv({pixels, ss, ch});
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(ch));
    std::vector<double> dw(ss), dl(ss);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t s = 0; s < ss; ++s) {
        const double* arow = dattn.data() + (p * ss + s) * ch;
        const double* wrow = sa.weights.data() + (p * ss + s) * ss;
        for (std::size_t t = 0; t < ss; ++t) {
          const double* vrow = sa.v.data() + (p * ss + t) * ch;
          double* dvrow = dv.data() + (p * ss + t) * ch;
          double acc = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            dvrow[c] += wrow[t] * arow[c];
            acc += arow[c] * vrow[c];
          }
          dw[t] = acc;
        }
        softmax_backward_row(wrow, dw.data(), ss, dl.data());
        const double* qrow = sa.q.data() + (p * ss + s) * ch;
        double* dqrow = dq.data() + (p * ss + s) * ch;
        for (std::size_t t = 0; t < ss; ++t) {
          const double g = dl[t] * inv_sqrt_c;
          if (g == 0.0) continue;
          const double* krow = sa.k.data() + (p * ss + t) * ch;
          double* dkrow = dk.data() + (p * ss + t) * ch;
          for (std::size_t c = 0; c < ch; ++c) {
            dqrow[c] += g * krow[c];
            dkrow[c] += g * qrow[c];
          }
        }
      }
    }
    linear_backward_acc(params.self_q, sa.input, dq, &dv_tilde, param_grads.self_q.weight,
                        param_grads.self_q.bias);
    linear_backward_acc(params.self_k, sa.input, dk, &dv_tilde, param_grads.self_k.weight,
                        param_grads.self_k.bias);
    linear_backward_acc(params.self_v, sa.input, dv, &dv_tilde, param_grads.self_v.weight,
                        param_grads.self_v.bias);
  }

  // Near-views cross-attention backward.
  const CrossAttnContext& ca = ctx.cross;
  Tensor dinjected({kk, pixels, ss, ch});
  if (kk == 1) {
    std::memcpy(dinjected.data(), dv_tilde.data(), dv_tilde.size() * sizeof(double));
  } else {
    const std::size_t m = (kk - 1) * ss;
    Tensor vol0 = copy_prefix(ca.injected, pixels * ss * ch, {pixels, ss, ch});
    Tensor rest = copy_suffix(ca.injected, pixels * ss * ch, {kk - 1, pixels, ss, ch});

    Tensor dvol0 = dv_tilde;  // residual path
    Tensor dattn({pixels, ss, ch});
    linear_backward_acc(params.cross_out, ca.attn, dv_tilde, &dattn, param_grads.cross_out.weight,
                        param_grads.cross_out.bias);

    Tensor dq({pixels, ss, ch});
    Tensor dk({kk - 1, pixels, ss, ch}), dv({kk - 1, pixels, ss, ch});
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(ch));
    std::vector<double> dw(m), dl(m);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t s = 0; s < ss; ++s) {
        const std::size_t row = p * ss + s;
        const double* arow = dattn.data() + row * ch;
        if (ca.fully_masked[row]) {
          // Fallback path: attn was cross_v applied to the query's own features.
          linear_backward_vec(params.cross_v, vol0.data() + row * ch, arow,
                              dvol0.data() + row * ch, param_grads.cross_v.weight,
                              param_grads.cross_v.bias);
          continue;
        }
        const double* wrow = ca.weights.data() + row * m;
        for (std::size_t j = 0; j < m; ++j) {
          if (wrow[j] == 0.0) {
            dw[j] = 0.0;
            continue;
          }
          const std::size_t k1 = j / ss, sp = j % ss;
          const std::size_t kidx = ((k1 * pixels + p) * ss + sp) * ch;
          const double* vrow = ca.v.data() + kidx;
          double* dvrow = dv.data() + kidx;
          double acc = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            dvrow[c] += wrow[j] * arow[c];
            acc += arow[c] * vrow[c];
          }
          dw[j] = acc;
        }
        softmax_backward_row(wrow, dw.data(), m, dl.data());
        const double* qrow = ca.q.data() + row * ch;
        double* dqrow = dq.data() + row * ch;
        for (std::size_t j = 0; j < m; ++j) {
          const double g = dl[j] * inv_sqrt_c;
          if (g == 0.0) continue;
          const std::size_t k1 = j / ss, sp = j % ss;
          const std::size_t kidx = ((k1 * pixels + p) * ss + sp) * ch;
          const double* krow = ca.k.data() + kidx;
          double* dkrow = dk.data() + kidx;
          for (std::size_t c = 0; c < ch; ++c) {
            dqrow[c] += g * krow[c];
            dkrow[c] += g * qrow[c];
          }
        }
      }
    }

    Tensor drest({kk - 1, pixels, ss, ch});
    linear_backward_acc(params.cross_q, vol0, dq, &dvol0, param_grads.cross_q.weight,
                        param_grads.cross_q.bias);
    linear_backward_acc(params.cross_k, rest, dk, &drest, param_grads.cross_k.weight,
                        param_grads.cross_k.bias);
    linear_backward_acc(params.cross_v, rest, dv, &drest, param_grads.cross_v.weight,
                        param_grads.cross_v.bias);

    std::memcpy(dinjected.data(), dvol0.data(), dvol0.size() * sizeof(double));
    std::memcpy(dinjected.data() + dvol0.size(), drest.data(), drest.size() * sizeof(double));
  }

  // Injection backward: identity into the raw volume plus ray_proj grads.
  linear_backward_acc(params.ray_proj, ctx.plan->harmonic, dinjected, nullptr,
                      param_grads.ray_proj.weight, param_grads.ray_proj.bias);
  scatter_volume_grad(geo, dinjected, map_grads);
}

EcaGrads eca_backward(const EcaContext& ctx, const EcaConfig& cfg, const EcaBlockParams& params,
                      const Tensor& grad_out) {
  EcaGrads grads;
  grads.params = zero_eca_params(cfg);
  const SampleGeometry& geo = ctx.plan->geo;
  grads.feature_maps.assign(ctx.n_views, Tensor({geo.feat_h, geo.feat_w, ctx.channels}));
  eca_backward_acc(ctx, cfg, params, grad_out, grads.params, grads.feature_maps);
  return grads;
}

}  // namespace epiray
