#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "epiray/diffusion.hpp"
#include "epiray/gradcheck.hpp"
#include "epiray/scene.hpp"

using namespace epiray;

namespace {
constexpr double kPi = std::numbers::pi;

DenoiserConfig micro_denoiser_config() {
  DenoiserConfig cfg;
  cfg.latent_channels = 2;
  cfg.hidden = 4;
  cfg.height = 4;
  cfg.width = 4;
  cfg.t_steps = 10;
  cfg.z_channels = 1;
  cfg.t_channels = 1;
  cfg.eca.k_views = 2;
  cfg.eca.s_samples = 3;
  cfg.eca.channels = 4;
  cfg.eca.near = 0.8;
  cfg.eca.far = 2.8;
  cfg.eca.harmonic = HarmonicConfig{2, kPi};
  return cfg;
}

ViewLayout micro_layout(int views) {
  const CameraIntrinsics intr(16, 16, 40.0 * kPi / 180.0);
  return generate_layout({30}, views, 1.8, intr);
}

std::vector<Tensor> random_latents(DeterministicRng& rng, std::size_t n, const DenoiserConfig& c) {
  std::vector<Tensor> z;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor t({static_cast<std::size_t>(c.height), static_cast<std::size_t>(c.width),
              static_cast<std::size_t>(c.latent_channels)});
    rng.fill_normal(t);
    z.push_back(std::move(t));
  }
  return z;
}

}  // namespace

TEST_CASE("linear beta schedule values and invariants") {
  const NoiseSchedule one = linear_beta_schedule(1, 1e-4, 2e-2);
  CHECK(one.beta == std::vector<double>{1e-4});
  CHECK(one.alpha_bar_at(1) == doctest::Approx(1.0 - 1e-4).epsilon(1e-15));

  const NoiseSchedule s = linear_beta_schedule(1000, 1e-4, 2e-2);
  // Independent product evaluation.
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0;
    prod *= 1.0 - beta;
    CHECK(s.beta_at(t) == doctest::Approx(beta).epsilon(1e-15));
  }
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(prod).epsilon(1e-12));
  CHECK(s.alpha_bar_at(1000) == doctest::Approx(4.04e-5).epsilon(2e-2));

  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    CHECK(s.alpha_bar_at(t) > 0.0);
  }

  CHECK_THROWS_AS(linear_beta_schedule(0, 1e-4, 2e-2), std::invalid_argument);
  CHECK_THROWS_AS(linear_beta_schedule(10, 0.0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(linear_beta_schedule(10, 0.5, 0.1), std::invalid_argument);
}

TEST_CASE("forward diffusion step: noiseless limit and Monte-Carlo moments") {
  DeterministicRng rng(3);
  Tensor z0({4}, {1.0, -2.0, 0.5, 3.0});

  const NoiseSchedule tiny = linear_beta_schedule(1, 1e-12, 1e-12);
  const Tensor z1 = forward_diffuse_step(z0, 1, tiny, rng);
  CHECK(max_abs_diff(z1, z0) < 1e-5);

  const NoiseSchedule sched = linear_beta_schedule(10, 1e-3, 0.3);
  const int t = 7;
  const int trials = 100000;
  Tensor z_prev({1}, {2.0});
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < trials; ++i) {
    const double z = forward_diffuse_step(z_prev, t, sched, rng)[0];
    m1 += z;
    m2 += z * z;
  }
  m1 /= trials;
  m2 = m2 / trials - m1 * m1;
  const double beta = sched.beta_at(t);
  const double want_mean = std::sqrt(1.0 - beta) * 2.0;
  const double se_mean = std::sqrt(beta / trials);
  CHECK(std::fabs(m1 - want_mean) < 3.0 * se_mean);
  const double se_var = beta * std::sqrt(2.0 / (trials - 1));
  CHECK(std::fabs(m2 - beta) < 3.0 * se_var);

  CHECK_THROWS_AS(forward_diffuse_step(z0, 0, sched, rng), std::invalid_argument);
  CHECK_THROWS_AS(forward_diffuse_step(z0, 11, sched, rng), std::invalid_argument);
}

TEST_CASE("closed-form diffusion matches the iterated chain in distribution") {
  DeterministicRng rng(5);
  const NoiseSchedule sched = linear_beta_schedule(20, 1e-3, 0.15);
  Tensor z0({1}, {1.5});

  // eps = 0 gives the mean exactly.
  Tensor zero_eps({1});
  const Tensor mean_only = forward_diffuse_closed(z0, 20, sched, zero_eps);
  CHECK(mean_only[0] == doctest::Approx(std::sqrt(sched.alpha_bar_at(20)) * 1.5).epsilon(1e-15));

  // Near t=0 with a tiny schedule, z_t stays close to z_0.
  const NoiseSchedule tiny = linear_beta_schedule(5, 1e-10, 1e-10);
  Tensor eps1({1}, {0.7});
  CHECK(forward_diffuse_closed(z0, 1, tiny, eps1)[0] == doctest::Approx(1.5).epsilon(1e-4));

  const int t = 12, trials = 10000;
  double it_m1 = 0.0, it_m2 = 0.0, cl_m1 = 0.0, cl_m2 = 0.0;
  for (int i = 0; i < trials; ++i) {
    Tensor z = z0;
    for (int s = 1; s <= t; ++s) z = forward_diffuse_step(z, s, sched, rng);
    it_m1 += z[0];
    it_m2 += z[0] * z[0];

    Tensor eps({1});
    rng.fill_normal(eps);
    const Tensor zc = forward_diffuse_closed(z0, t, sched, eps);
    cl_m1 += zc[0];
    cl_m2 += zc[0] * zc[0];
  }
  it_m1 /= trials;
  cl_m1 /= trials;
  const double it_var = it_m2 / trials - it_m1 * it_m1;
  const double cl_var = cl_m2 / trials - cl_m1 * cl_m1;

  const double want_mean = std::sqrt(sched.alpha_bar_at(t)) * 1.5;
  const double want_var = 1.0 - sched.alpha_bar_at(t);
  const double se_mean = std::sqrt(want_var / trials);
  const double se_var = want_var * std::sqrt(2.0 / (trials - 1));
  CHECK(std::fabs(it_m1 - want_mean) < 3.0 * se_mean);
  CHECK(std::fabs(cl_m1 - want_mean) < 3.0 * se_mean);
  CHECK(std::fabs(it_var - want_var) < 3.0 * se_var);
  CHECK(std::fabs(cl_var - want_var) < 3.0 * se_var);
}

TEST_CASE("mvs loss: oracle stub, zero denoiser, permutation symmetry") {
  const NoiseSchedule sched = linear_beta_schedule(10, 1e-4, 2e-2);
  DeterministicRng rng(7);
  const DenoiserConfig cfg = micro_denoiser_config();
  std::vector<Tensor> z0 = random_latents(rng, 4, cfg);
  std::vector<Tensor> eps(4);
  for (auto& e : eps) {
    e = Tensor(z0[0].shape());
    rng.fill_normal(e);
  }
  const int t = 6;

  // A predictor that returns the true noise has zero loss.
  DenoiseFn oracle = [&](const std::vector<Tensor>& z_t, int tt) {
    std::vector<Tensor> out(z_t.size());
    const double a = std::sqrt(sched.alpha_bar_at(tt));
    const double b = std::sqrt(1.0 - sched.alpha_bar_at(tt));
    for (std::size_t i = 0; i < z_t.size(); ++i) {
      out[i] = scale(z_t[i] - scale(z0[i], a), 1.0 / b);
    }
    return out;
  };
  CHECK(mvs_loss_with(oracle, z0, t, eps, sched) < 1e-20);

  // A zero predictor scores mean(eps^2), close to 1 for standard normals.
  DenoiseFn zero_fn = [&](const std::vector<Tensor>& z_t, int) {
    return std::vector<Tensor>(z_t.size(), Tensor(z_t[0].shape()));
  };
  double second_moment = 0.0;
  std::size_t count = 0;
  for (const Tensor& e : eps) {
    second_moment += dot_flat(e, e);
    count += e.size();
  }
  second_moment /= static_cast<double>(count);
  CHECK(mvs_loss_with(zero_fn, z0, t, eps, sched) == doctest::Approx(second_moment).epsilon(1e-12));
  CHECK(second_moment == doctest::Approx(1.0).epsilon(0.25));

  // Permuting views together with the layout leaves the loss unchanged.
  // (Irregular azimuths so nearest-view selection has no ties.)
  const CameraIntrinsics intr(16, 16, 40.0 * kPi / 180.0);
  ViewLayout irregular;
  int vi = 0;
  for (double az : {0.0, 57.0, 131.0, 260.0}) {
    const double e = 15.0 + 7.0 * vi++;
    const double er = e * kPi / 180.0, ar = az * kPi / 180.0;
    const Eigen::Vector3d pos(1.8 * std::cos(er) * std::cos(ar), 1.8 * std::sin(er),
                              1.8 * std::cos(er) * std::sin(ar));
    irregular.intrinsics.push_back(intr);
    irregular.poses.push_back(make_lookat_pose(pos, Eigen::Vector3d::Zero()));
    irregular.meta.push_back({e, az, 1.8});
  }
  DeterministicRng drng(11);
  const ToyDenoiser den = make_toy_denoiser(cfg, irregular, drng);
  const double base = mvs_loss_fixed(den, z0, t, eps, sched, 0);

  const std::vector<int> perm = {2, 0, 3, 1};  // new order: old index per slot
  ViewLayout perm_layout;
  std::vector<Tensor> perm_z0, perm_eps;
  for (int old : perm) {
    perm_layout.intrinsics.push_back(irregular.intrinsics[old]);
    perm_layout.poses.push_back(irregular.poses[old]);
    perm_layout.meta.push_back(irregular.meta[old]);
    perm_z0.push_back(z0[old]);
    perm_eps.push_back(eps[old]);
  }
  DeterministicRng drng2(11);
  const ToyDenoiser den_perm = make_toy_denoiser(cfg, perm_layout, drng2);
  const int perm_input = 1;  // old view 0 sits at slot 1
  const double permuted = mvs_loss_fixed(den_perm, perm_z0, t, perm_eps, sched, perm_input);
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("toy denoiser: shape, independence at init, coupling after") {
  const DenoiserConfig cfg = micro_denoiser_config();
  const ViewLayout layout = micro_layout(4);
  DeterministicRng rng(13);
  ToyDenoiser den = make_toy_denoiser(cfg, layout, rng);
  DeterministicRng zrng(14);
  std::vector<Tensor> z = random_latents(zrng, 4, cfg);

  const std::vector<Tensor> eps_hat = toy_denoiser_forward(den, z, 3, 0, z[0]);
  REQUIRE(eps_hat.size() == 4);
  CHECK(eps_hat[0].shape() == z[0].shape());

  // Perturbing view j != i leaves view i's output bit-identical at init.
  std::vector<Tensor> z_perturbed = z;
  z_perturbed[2][5] += 0.5;
  const std::vector<Tensor> out2 = toy_denoiser_forward(den, z_perturbed, 3, 0, z[0]);
  CHECK(bit_equal(out2[0], eps_hat[0]));
  CHECK(bit_equal(out2[1], eps_hat[1]));
  CHECK(bit_equal(out2[3], eps_hat[3]));
  CHECK(!bit_equal(out2[2], eps_hat[2]));

  // Nonzero attention output projections couple the views. With K=2 each view
  // attends to its single nearest ring neighbour, so perturb view 1 (view 0's
  // neighbour) and watch view 0 change.
  den.eca_mid.final_out.weight.fill(0.05);
  den.eca_up.final_out.weight.fill(0.05);
  std::vector<Tensor> z_neighbor = z;
  z_neighbor[1][5] += 0.5;
  const std::vector<Tensor> base = toy_denoiser_forward(den, z, 3, 0, z[0]);
  const std::vector<Tensor> coupled = toy_denoiser_forward(den, z_neighbor, 3, 0, z[0]);
  CHECK(!bit_equal(coupled[0], base[0]));
}

TEST_CASE("train_step: lr 0 no-op, frozen tensors byte-identical, loss drops") {
  const DenoiserConfig cfg = micro_denoiser_config();
  const ViewLayout layout = micro_layout(4);
  DeterministicRng rng(17);
  ToyDenoiser den = make_toy_denoiser(cfg, layout, rng);
  const NoiseSchedule sched = linear_beta_schedule(cfg.t_steps, 1e-4, 2e-2);

  DeterministicRng zrng(18);
  std::vector<Tensor> z0 = random_latents(zrng, 4, cfg);

  // Snapshot all tensors.
  std::vector<Tensor> frozen_before;
  den.for_each_frozen([&](const char*, Tensor& t) { frozen_before.push_back(t); });
  std::vector<Tensor> eca_before;
  den.eca_mid.for_each([&](const char*, Tensor& t) { eca_before.push_back(t); });

  TrainerState state = make_trainer_state(den);
  DeterministicRng lr0_rng(19);
  train_step(den, {z0}, sched, 0, 0.0, lr0_rng, state);
  {
    std::size_t i = 0;
    den.for_each_frozen([&](const char*, Tensor& t) { CHECK(bit_equal(t, frozen_before[i++])); });
    i = 0;
    bool all_same = true;
    den.eca_mid.for_each(
        [&](const char*, Tensor& t) { all_same = all_same && bit_equal(t, eca_before[i++]); });
    CHECK(all_same);
  }

  DeterministicRng train_rng(20);
  TrainerState state2 = make_trainer_state(den);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 80; ++step) {
    const double loss = train_step(den, {z0}, sched, 0, 0.005, train_rng, state2);
    if (step == 0) first = loss;
    last = loss;
  }
  CHECK(last < first);
  CHECK(std::isfinite(last));

  std::size_t i = 0;
  den.for_each_frozen([&](const char*, Tensor& t) { CHECK(bit_equal(t, frozen_before[i++])); });
  i = 0;
  bool changed = false;
  den.eca_mid.for_each(
      [&](const char*, Tensor& t) { changed = changed || !bit_equal(t, eca_before[i++]); });
  CHECK(changed);
}

TEST_CASE("end-to-end training gradient matches finite differences (micro)") {
  // 2 views, 4x4 latents, C=4 hidden, T=10.
  DenoiserConfig cfg = micro_denoiser_config();
  cfg.eca.k_views = 2;
  const ViewLayout layout = micro_layout(2);
  DeterministicRng rng(21);
  ToyDenoiser den = make_toy_denoiser(cfg, layout, rng);
  const NoiseSchedule sched = linear_beta_schedule(10, 1e-4, 2e-2);

  DeterministicRng zrng(22);
  std::vector<Tensor> z0 = random_latents(zrng, 2, cfg);
  std::vector<Tensor> eps(2);
  for (auto& e : eps) {
    e = Tensor(z0[0].shape());
    zrng.fill_normal(e);
  }
  const int t = 4;

  LossContext ctx;
  mvs_loss_fixed(den, z0, t, eps, sched, 0, &ctx);
  const EcaParamGrads grads = mvs_loss_backward(den, ctx);

  // Spot-check a representative subset of parameter tensors end to end.
  const std::vector<std::string> picks = {"cross_q.weight", "cross_v.bias",  "self_k.weight",
                                          "ray_proj.weight", "fusion.weight", "final_out.weight",
                                          "final_out.bias"};
  for (bool mid : {true, false}) {
    EcaBlockParams& live = mid ? den.eca_mid : den.eca_up;
    const EcaBlockParams& g = mid ? grads.mid : grads.up;
    for (const std::string& name : picks) {
      Tensor* param = nullptr;
      const Tensor* grad = nullptr;
      live.for_each([&](const char* n, Tensor& tt) {
        if (name == n) param = &tt;
      });
      const_cast<EcaBlockParams&>(g).for_each([&](const char* n, Tensor& tt) {
        if (name == n) grad = &tt;
      });
      auto loss = [&](const Tensor& candidate) {
        const Tensor saved = *param;
        *param = candidate;
        const double value = mvs_loss_fixed(den, z0, t, eps, sched, 0);
        *param = saved;
        return value;
      };
      const double err = finite_diff_check(loss, *param, *grad, 1e-5);
      INFO((mid ? "mid." : "up."), name);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("ancestral sampler: oracle inversion and determinism") {
  const NoiseSchedule sched = linear_beta_schedule(50, 1e-4, 2e-2);
  DeterministicRng rng(23);
  Tensor z0({2, 2, 1});
  rng.fill_normal(z0);

  // Perfect-oracle denoiser with zero posterior noise recovers z0.
  DenoiseFn oracle = [&](const std::vector<Tensor>& z_t, int t) {
    std::vector<Tensor> out(z_t.size());
    const double a = std::sqrt(sched.alpha_bar_at(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar_at(t));
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = scale(z_t[i] - scale(z0, a), 1.0 / b);
    return out;
  };
  const std::vector<Tensor> rec = ancestral_sample(oracle, sched, {2, 2, 1}, 3, nullptr);
  for (const Tensor& r : rec) CHECK(max_abs_diff(r, z0) < 1e-6);

  // Fixed seed, bit-identical runs of the full multiview sampler.
  const DenoiserConfig cfg = micro_denoiser_config();
  const ViewLayout layout = micro_layout(4);
  DeterministicRng drng(24);
  const ToyDenoiser den = make_toy_denoiser(cfg, layout, drng);
  const NoiseSchedule short_sched = linear_beta_schedule(cfg.t_steps, 1e-4, 2e-2);
  Tensor y({4, 4, 2});
  rng.fill_normal(y);

  DeterministicRng s1(99), s2(99), s3(100);
  const std::vector<Tensor> a = sample_multiview(den, short_sched, 0, y, s1);
  const std::vector<Tensor> b = sample_multiview(den, short_sched, 0, y, s2);
  const std::vector<Tensor> c = sample_multiview(den, short_sched, 0, y, s3);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(bit_equal(a[i], b[i]));
    CHECK(all_finite(a[i]));
  }
  CHECK(!bit_equal(a[0], c[0]));
}

TEST_CASE("checkpoint round trip preserves every tensor") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "epiray_ckpt_test";
  fs::remove_all(dir);

  const DenoiserConfig cfg = micro_denoiser_config();
  const ViewLayout layout = micro_layout(4);
  DeterministicRng rng(31);
  ToyDenoiser den = make_toy_denoiser(cfg, layout, rng);
  den.eca_mid.cross_q.weight[0] = 0.123456;  // make it distinguishable from a fresh init

  save_denoiser(den, dir.string());
  ToyDenoiser back = load_denoiser(dir.string());

  CHECK(back.cfg.hidden == cfg.hidden);
  CHECK(back.layout.size() == layout.size());
  // Values survive the f32 storage: compare after narrowing the original.
  CHECK(static_cast<float>(den.eca_mid.cross_q.weight[0]) ==
        doctest::Approx(back.eca_mid.cross_q.weight[0]).epsilon(1e-7));
  CHECK(back.plans_mid.size() == 4);

  // Forward passes agree up to the f32 narrowing of the parameters.
  DeterministicRng zrng(32);
  std::vector<Tensor> z = random_latents(zrng, 4, cfg);
  const std::vector<Tensor> e1 = toy_denoiser_forward(den, z, 2, 0, z[0]);
  const std::vector<Tensor> e2 = toy_denoiser_forward(back, z, 2, 0, z[0]);
  CHECK(max_abs_diff(e1[0], e2[0]) < 1e-5);

  fs::remove_all(dir);
}
