#include <cmath>
#include <numbers>

#include "doctest.h"
#include "epiray/camera.hpp"
#include "epiray/ray_sampling.hpp"
#include "epiray/rng.hpp"
#include "epiray/scene.hpp"

using namespace epiray;

namespace {
constexpr double kPi = std::numbers::pi;

CameraIntrinsics test_intrinsics(int w = 64, int h = 64) {
  return CameraIntrinsics(w, h, 40.0 * kPi / 180.0);
}

// Independent scalar bilinear formula (same pixel-center and clamp convention).
double oracle_bilinear(const Tensor& map, double u, double v, std::size_t c) {
  const int h = static_cast<int>(map.dim(0)), w = static_cast<int>(map.dim(1));
  const std::size_t ch = map.dim(2);
  const double x = u - 0.5, y = v - 0.5;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const double wx = x - x0, wy = y - y0;
  auto px = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, h - 1);
    xx = std::clamp(xx, 0, w - 1);
    return map[(static_cast<std::size_t>(yy) * w + xx) * ch + c];
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}
}  // namespace

TEST_CASE("rays from feature map hit their patch centers") {
  const CameraIntrinsics intr = test_intrinsics();
  const CameraPose pose = make_lookat_pose(Eigen::Vector3d(0.3, 1.2, 1.5), Eigen::Vector3d::Zero());

  // 1x1 grid: single ray along the principal axis.
  std::vector<Ray> rays = rays_from_feature_map(intr, pose, 1, 1);
  REQUIRE(rays.size() == 1);
  CHECK((rays[0].origin - pose.center()).norm() < 1e-12);
  CHECK((rays[0].dir - Eigen::Vector3d(pose.R.row(2))).norm() < 1e-12);
  CHECK(std::abs(rays[0].dir.norm() - 1.0) < 1e-12);

  // The principal ray passes through the look-at target.
  const Eigen::Vector3d to_target = -pose.center();
  CHECK(rays[0].dir.cross(to_target).norm() < 1e-9);

  // 4x4 grid: each ray re-projects onto its own patch center.
  rays = rays_from_feature_map(intr, pose, 4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const Ray& r = rays[i * 4 + j];
      const PixelProjection pp = project_point(intr, pose, r.point_at(1.8));
      REQUIRE(pp.valid);
      CHECK(std::abs(pp.u - (j + 0.5) * intr.width / 4.0) < 1e-9);
      CHECK(std::abs(pp.v - (i + 0.5) * intr.height / 4.0) < 1e-9);
    }
  }
}

TEST_CASE("sample_depths closed form") {
  CHECK(sample_depths(1.0, 3.0, 1) == std::vector<double>{2.0});

  const std::vector<double> d = sample_depths(0.8, 2.8, 16);
  REQUIRE(d.size() == 16);
  CHECK(d.front() == doctest::Approx(0.8625).epsilon(1e-14));
  CHECK(d.back() == doctest::Approx(2.7375).epsilon(1e-14));
  for (std::size_t s = 1; s < d.size(); ++s) {
    CHECK(d[s] - d[s - 1] == doctest::Approx(0.125).epsilon(1e-12));
  }

  CHECK_THROWS_AS(sample_depths(-1.0, 2.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(sample_depths(2.0, 1.0, 4), std::invalid_argument);
  CHECK_THROWS_AS(sample_depths(1.0, 2.0, 0), std::invalid_argument);
}

TEST_CASE("reprojected samples stay on the epipolar line") {
  const CameraIntrinsics intr = test_intrinsics();
  const ViewLayout layout = generate_layout({10, 30}, 8, 1.8, intr);
  const int target = 2, ref = 9;

  const std::vector<Ray> rays = rays_from_feature_map(intr, layout.poses[target], 8, 8);
  const std::vector<double> depths = sample_depths(0.8, 2.8, 16);
  const FundamentalMatrix fm =
      fundamental_matrix(intr, layout.poses[target], intr, layout.poses[ref]);

  // Self-reprojection: every depth lands on the originating patch center.
  for (int p : {0, 27, 63}) {
    const std::vector<ReprojectedSample> self =
        reproject_samples(rays[p], depths, intr, layout.poses[target]);
    const double cu = (p % 8 + 0.5) * intr.width / 8.0;
    const double cv = (p / 8 + 0.5) * intr.height / 8.0;
    for (const ReprojectedSample& s : self) {
      REQUIRE(s.valid);
      CHECK(std::abs(s.u - cu) < 1e-9);
      CHECK(std::abs(s.v - cv) < 1e-9);
    }
  }

  for (int p = 0; p < 64; p += 7) {
    const std::vector<ReprojectedSample> samples =
        reproject_samples(rays[p], depths, intr, layout.poses[ref]);
    const double cu = (p % 8 + 0.5) * intr.width / 8.0;
    const double cv = (p / 8 + 0.5) * intr.height / 8.0;
    const Eigen::Vector3d p1(cu, cv, 1.0);

    // Collect valid samples; they are collinear and satisfy the epipolar constraint.
    std::vector<Eigen::Vector2d> pts;
    for (const ReprojectedSample& s : samples) {
      if (!s.valid) continue;
      pts.emplace_back(s.u, s.v);
      CHECK(fm.residual(p1, Eigen::Vector3d(s.u, s.v, 1.0)) < 1e-9);
    }
    if (pts.size() >= 3) {
      const Eigen::Vector2d d0 = (pts.back() - pts.front()).normalized();
      for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
        const Eigen::Vector2d di = pts[i] - pts.front();
        CHECK(std::abs(di.x() * d0.y() - di.y() * d0.x()) < 1e-6);
      }
    }
  }

  // A depth placing the point behind the reference camera is invalid.
  Ray away{layout.poses[ref].center(), Eigen::Vector3d(layout.poses[ref].R.row(2)) * -1.0};
  const std::vector<ReprojectedSample> behind =
      reproject_samples(away, {0.5}, intr, layout.poses[ref]);
  CHECK(!behind[0].valid);
}

TEST_CASE("bilinear sampling matches the scalar oracle") {
  DeterministicRng rng(77);
  Tensor map({5, 5, 3});
  rng.fill_normal(map);

  // Exactly at a pixel center.
  Tensor at_center = bilinear_sample(map, 2.5, 3.5);
  for (std::size_t c = 0; c < 3; ++c) CHECK(at_center[c] == map[(3 * 5 + 2) * 3 + c]);

  // Midpoint of four pixel centers -> their mean.
  Tensor mid = bilinear_sample(map, 2.0, 3.0);
  for (std::size_t c = 0; c < 3; ++c) {
    const double m = (map[(2 * 5 + 1) * 3 + c] + map[(2 * 5 + 2) * 3 + c] +
                      map[(3 * 5 + 1) * 3 + c] + map[(3 * 5 + 2) * 3 + c]) /
                     4.0;
    CHECK(mid[c] == doctest::Approx(m).epsilon(1e-14));
  }

  for (int trial = 0; trial < 100; ++trial) {
    const double u = rng.uniform(0.0, 5.0 - 1e-9);
    const double v = rng.uniform(0.0, 5.0 - 1e-9);
    Tensor got = bilinear_sample(map, u, v);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(std::abs(got[c] - oracle_bilinear(map, u, v, c)) < 1e-12);
    }
  }

  CHECK_THROWS_AS(bilinear_sample(map, 5.0, 1.0), std::out_of_range);
  CHECK_THROWS_AS(bilinear_sample(map, 1.0, -0.01), std::out_of_range);
}

TEST_CASE("build_sample_volume shapes, masks, determinism") {
  const CameraIntrinsics intr = test_intrinsics(32, 32);
  const ViewLayout layout = generate_layout({30}, 16, 1.8, intr);
  DeterministicRng rng(5);
  std::vector<Tensor> maps;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Tensor m({32, 32, 4});
    rng.fill_normal(m);
    maps.push_back(m);
  }

  double near, far;
  default_near_far(layout, 0, &near, &far);
  CHECK(near == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(far == doctest::Approx(2.8).epsilon(1e-12));

  const EpipolarSampleMap vol = build_sample_volume(0, layout, maps, 4, 16, near, far);
  CHECK(vol.features.shape() == std::vector<std::size_t>{4, 1024, 16, 4});
  CHECK(vol.valid.shape() == std::vector<std::size_t>{4, 1024, 16});
  CHECK(vol.depths.shape() == std::vector<std::size_t>{1024, 16});
  CHECK(vol.view_indices == std::vector<int>{0, 1, 15, 2});

  // Depths strictly increasing; invalid entries exactly zero.
  for (std::size_t p = 0; p < 1024; ++p) {
    for (std::size_t s = 1; s < 16; ++s) {
      CHECK(vol.depths[p * 16 + s] > vol.depths[p * 16 + s - 1]);
    }
  }
  std::size_t invalid_count = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t p = 0; p < 1024; ++p) {
      for (std::size_t s = 0; s < 16; ++s) {
        const std::size_t base = (k * 1024 + p) * 16 + s;
        if (vol.valid[base] == 0.0) {
          ++invalid_count;
          for (std::size_t c = 0; c < 4; ++c) CHECK(vol.features[base * 4 + c] == 0.0);
        }
      }
    }
  }
  CHECK(invalid_count > 0);  // side views clip parts of the frustum

  // Valid samples satisfy the epipolar constraint against the target view.
  for (std::size_t k = 1; k < 4; ++k) {
    const FundamentalMatrix fm = fundamental_matrix(intr, layout.poses[0], intr,
                                                    layout.poses[vol.view_indices[k]]);
    for (std::size_t p = 0; p < 1024; p += 101) {
      const Eigen::Vector3d p1((p % 32 + 0.5), (p / 32 + 0.5), 1.0);
      for (std::size_t s = 0; s < 16; ++s) {
        const std::size_t base = (k * 1024 + p) * 16 + s;
        if (vol.valid[base] == 0.0) continue;
        const Eigen::Vector3d p2(vol.uv[base * 2], vol.uv[base * 2 + 1], 1.0);
        CHECK(fm.residual(p1, p2) < 1e-9);
      }
    }
  }

  // Self-view slice reproduces the target map at every depth.
  for (std::size_t p = 0; p < 1024; p += 37) {
    for (std::size_t s = 0; s < 16; ++s) {
      const std::size_t base = (0 * 1024 + p) * 16 + s;
      REQUIRE(vol.valid[base] == 1.0);
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(std::abs(vol.features[base * 4 + c] - maps[0][p * 4 + c]) < 1e-12);
      }
    }
  }

  // K=1 degenerate volume: only target self-samples.
  const EpipolarSampleMap self_vol = build_sample_volume(3, layout, maps, 1, 4, near, far);
  CHECK(self_vol.view_indices == std::vector<int>{3});
  CHECK(self_vol.features.dim(0) == 1);

  // Bit-identical across rebuilds.
  const EpipolarSampleMap again = build_sample_volume(0, layout, maps, 4, 16, near, far);
  CHECK(bit_equal(again.features, vol.features));
  CHECK(bit_equal(again.valid, vol.valid));
  CHECK(bit_equal(again.depths, vol.depths));
  CHECK(bit_equal(again.uv, vol.uv));
}

TEST_CASE("sphere-scene correspondence through the sample volume") {
  const CameraIntrinsics intr = test_intrinsics(48, 48);
  const ViewLayout layout = generate_layout({30}, 16, 1.8, intr);
  const SyntheticScene scene = make_sphere_scene();
  const MultiviewRenderSet renders = make_dataset(scene, layout, 48, 48);

  double near, far;
  default_near_far(layout, 0, &near, &far);

  const CorrespondenceReport self_only =
      oracle_correspondence_check(renders, 0, 1, 16, near, far);
  CHECK(!self_only.empty);
  CHECK(self_only.mean_color_err < 1e-6);

  const CorrespondenceReport k4 = oracle_correspondence_check(renders, 0, 4, 16, near, far);
  CHECK(!k4.empty);
  CHECK(k4.mean_color_err < 0.05);

  const CorrespondenceReport k4_fine = oracle_correspondence_check(renders, 0, 4, 256, near, far);
  CHECK(k4_fine.mean_color_err < k4.mean_color_err);
}
