#include <cmath>
#include <numbers>

#include "doctest.h"
#include "epiray/camera.hpp"
#include "epiray/gradcheck.hpp"
#include "epiray/ray_encoding.hpp"
#include "epiray/rng.hpp"

using namespace epiray;

namespace {
constexpr double kPi = std::numbers::pi;

Ray random_ray(DeterministicRng& rng) {
  Eigen::Vector3d o(rng.normal(), rng.normal(), rng.normal());
  Eigen::Vector3d d;
  do {
    d = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (d.norm() < 1e-6);
  return {o, d.normalized()};
}
}  // namespace

TEST_CASE("plucker coordinates: hand case, invariants, renormalization") {
  // Ray through the origin has zero moment.
  PluckerRay p = plucker_coordinates({Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 0, 1)});
  CHECK(p.m.norm() == 0.0);

  // o=(1,0,0), d=(0,0,1): m = (0,-1,0).
  p = plucker_coordinates({Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 0, 1)});
  CHECK((p.m - Eigen::Vector3d(0, -1, 0)).norm() < 1e-15);
  CHECK((p.d - Eigen::Vector3d(0, 0, 1)).norm() == 0.0);

  DeterministicRng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Ray r = random_ray(rng);
    const PluckerRay pr = plucker_coordinates(r);
    CHECK(std::abs(pr.m.dot(pr.d)) < 1e-12);
    CHECK(std::abs(pr.d.norm() - 1.0) < 1e-12);

    // Sliding the origin along the ray leaves (m, d) unchanged.
    const double lambda = rng.uniform(-3.0, 3.0);
    const PluckerRay slid = plucker_coordinates({r.origin + lambda * r.dir, r.dir});
    CHECK((slid.m - pr.m).norm() < 1e-12);
    CHECK((slid.d - pr.d).norm() < 1e-12);
  }

  bool renorm = false;
  p = plucker_coordinates({Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 0, 2)}, &renorm);
  CHECK(renorm);
  CHECK(std::abs(p.d.norm() - 1.0) < 1e-15);
}

TEST_CASE("canonical transform: identity configuration and defining-ray property") {
  CameraPose ident;
  CanonicalFrame frame = canonical_transform(ident, Eigen::Vector3d(0, 0, 1));
  CHECK((frame.rc - Eigen::Matrix3d::Identity()).norm() < 1e-15);
  CHECK(frame.matrix34().col(3).norm() == 0.0);
  CHECK(!frame.used_fallback);

  DeterministicRng rng(11);
  const CameraIntrinsics intr(32, 32, 40.0 * kPi / 180.0);
  const ViewLayout layout = generate_layout({-10, 0, 10, 20, 30, 40}, 16, 1.8, intr);
  for (int trial = 0; trial < 500; ++trial) {
    const CameraPose& pose = layout.poses[trial % layout.size()];
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() < 1e-6) continue;
    const CanonicalFrame f = canonical_transform(pose, v);

    CHECK((f.rc * f.rc.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK(f.rc.determinant() == doctest::Approx(1.0).epsilon(1e-12));

    const Ray defining{pose.center(), v.normalized()};
    const Ray mapped = f.apply(defining);
    CHECK(mapped.origin.norm() < 1e-9);
    CHECK((mapped.dir - Eigen::Vector3d(0, 0, 1)).norm() < 1e-9);
  }
}

TEST_CASE("canonical transform degenerate fallback stays orthonormal") {
  CameraPose pose;  // camera Y-axis is (0,1,0)
  const CanonicalFrame f = canonical_transform(pose, Eigen::Vector3d(0, 1, 0));
  CHECK(f.used_fallback);
  CHECK((f.rc * f.rc.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(f.rc.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  const Ray mapped = f.apply({pose.center(), Eigen::Vector3d(0, 1, 0)});
  CHECK((mapped.dir - Eigen::Vector3d(0, 0, 1)).norm() < 1e-9);

  CHECK_THROWS_AS(canonical_transform(pose, Eigen::Vector3d::Zero()), std::invalid_argument);
}

TEST_CASE("canonicalization preserves angles and inverts exactly") {
  DeterministicRng rng(17);
  CameraPose pose = make_lookat_pose(Eigen::Vector3d(1.0, 0.8, -1.2), Eigen::Vector3d::Zero());
  const CanonicalFrame frame = canonical_transform(pose, -pose.center());

  std::vector<Ray> rays;
  for (int i = 0; i < 50; ++i) rays.push_back(random_ray(rng));
  const std::vector<Ray> canon = canonicalize_neighbor_rays(frame, rays);

  for (std::size_t i = 0; i + 1 < rays.size(); ++i) {
    const double before = std::acos(std::clamp(rays[i].dir.dot(rays[i + 1].dir), -1.0, 1.0));
    const double after = std::acos(std::clamp(canon[i].dir.dot(canon[i + 1].dir), -1.0, 1.0));
    CHECK(std::abs(before - after) < 1e-12);
  }
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const Ray back = frame.invert(canon[i]);
    CHECK((back.origin - rays[i].origin).norm() < 1e-9);
    CHECK((back.dir - rays[i].dir).norm() < 1e-9);
  }

  // The target ray itself maps to the canonical ray.
  const Ray target{pose.center(), (-pose.center()).normalized()};
  const Ray mapped = canonicalize_neighbor_rays(frame, {target})[0];
  CHECK(mapped.origin.norm() < 1e-9);
  CHECK((mapped.dir - Eigen::Vector3d(0, 0, 1)).norm() < 1e-9);
}

TEST_CASE("harmonic encoding values and layout") {
  HarmonicConfig cfg{2, kPi};
  const std::vector<double> enc = harmonic_encode({0.5}, cfg);
  REQUIRE(enc.size() == 4);
  // Layout per frequency: [sin, cos]; frequencies pi, 2*pi.
  CHECK(enc[0] == doctest::Approx(1.0).epsilon(1e-12));   // sin(pi/2)
  CHECK(std::abs(enc[1]) < 1e-12);                        // cos(pi/2)
  CHECK(std::abs(enc[2]) < 1e-12);                        // sin(pi)
  CHECK(enc[3] == doctest::Approx(-1.0).epsilon(1e-12));  // cos(pi)

  // Zero input: sines 0, cosines 1.
  const std::vector<double> zero = harmonic_encode({0.0, 0.0, 0.0}, HarmonicConfig{3, kPi});
  for (int l = 0; l < 3; ++l) {
    for (int i = 0; i < 3; ++i) {
      CHECK(zero[(2 * l) * 3 + i] == 0.0);
      CHECK(zero[(2 * l + 1) * 3 + i] == 1.0);
    }
  }

  // L = 0: empty output.
  CHECK(harmonic_encode({1.0, 2.0}, HarmonicConfig{0, kPi}).empty());

  // Values stay in [-1, 1].
  DeterministicRng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> e =
        harmonic_encode({rng.uniform(-10, 10), rng.uniform(-10, 10)}, HarmonicConfig{4, kPi});
    for (double v : e) CHECK(std::abs(v) <= 1.0);
  }

  Tensor batch({2, 2}, {0.5, 0.0, 1.0, 0.25});
  Tensor rows = harmonic_encode_rows(batch, cfg);
  CHECK(rows.shape() == std::vector<std::size_t>{2, 8});
  CHECK(rows[0] == doctest::Approx(1.0).epsilon(1e-12));  // sin(pi*0.5)
}

TEST_CASE("ray encoding injection: zero cases and gradient") {
  DeterministicRng rng(31);
  const HarmonicConfig cfg{4, kPi};
  const std::size_t channels = 5;

  Tensor features({3, 2, channels});
  rng.fill_normal(features);
  Tensor plucker({3, 2, 6});
  rng.fill_normal(plucker);

  // Zero projection: output equals input exactly.
  LinearParams zero_proj(channels, cfg.encoded_size(6));
  Tensor same = inject_ray_encoding(features, plucker, cfg, zero_proj);
  CHECK(bit_equal(same, features));

  // Zero features: output equals the projected encoding.
  LinearParams proj = xavier_init(rng, channels, cfg.encoded_size(6));
  Tensor zero_features({3, 2, channels});
  Tensor injected = inject_ray_encoding(zero_features, plucker, cfg, proj);
  Tensor expected = linear_forward(proj, harmonic_encode_rows(plucker, cfg));
  CHECK(max_abs_diff(injected, expected) == 0.0);

  // Gradient through the injection (projection weight) via finite differences.
  Tensor probe_target({3, 2, channels});
  rng.fill_normal(probe_target);
  auto loss_of_weight = [&](const Tensor& w) {
    LinearParams p2 = proj;
    p2.weight = w;
    return dot_flat(inject_ray_encoding(features, plucker, cfg, p2), probe_target);
  };
  // Analytic: d loss / d W = probe_target rows (outer) encoded rows.
  const Tensor enc = harmonic_encode_rows(plucker, cfg);
  Tensor dw(proj.weight.shape());
  Tensor db(proj.bias.shape());
  linear_backward_acc(proj, enc, probe_target, nullptr, dw, db);
  CHECK(finite_diff_check(loss_of_weight, proj.weight, dw) < 1e-4);

  // Dimension mismatch is rejected.
  CHECK_THROWS_AS(inject_ray_encoding(features, Tensor({3, 2, 5}), cfg, proj),
                  std::invalid_argument);
}
