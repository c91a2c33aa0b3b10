#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "epiray/camera.hpp"
#include "epiray/rng.hpp"

using namespace epiray;

namespace {

constexpr double kPi = std::numbers::pi;

CameraIntrinsics test_intrinsics() { return CameraIntrinsics(64, 48, 40.0 * kPi / 180.0); }

ViewLayout paper_layout(const CameraIntrinsics& intr, double radius = 1.8) {
  return generate_layout({-10, 0, 10, 20, 30, 40}, 16, radius, intr);
}

// Brute-force nearest-view oracle: acos-based angles, stable sort, same 1e-9 tie rule.
std::vector<int> oracle_nearest(const ViewLayout& layout, int target, int k) {
  struct E {
    double ang;
    int idx;
  };
  std::vector<E> es;
  const Eigen::Vector3d c0 = layout.poses[target].center().normalized();
  for (int i = 0; i < static_cast<int>(layout.size()); ++i) {
    if (i == target) continue;
    const double d = std::clamp(c0.dot(layout.poses[i].center().normalized()), -1.0, 1.0);
    es.push_back({std::acos(d), i});
  }
  std::stable_sort(es.begin(), es.end(), [](const E& a, const E& b) {
    if (std::abs(a.ang - b.ang) < 1e-9) return a.idx < b.idx;
    return a.ang < b.ang;
  });
  std::vector<int> out{target};
  for (int i = 0; i < k - 1; ++i) out.push_back(es[i].idx);
  return out;
}

Eigen::Vector3d random_unit_ball_point(DeterministicRng& rng, double r = 0.9) {
  while (true) {
    Eigen::Vector3d p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (p.norm() <= 1.0) return r * p;
  }
}

}  // namespace

TEST_CASE("lookat pose projects the target to the principal point") {
  const CameraIntrinsics intr = test_intrinsics();
  for (const Eigen::Vector3d pos : {Eigen::Vector3d(0, 0, 2), Eigen::Vector3d(2, 0, 0),
                                    Eigen::Vector3d(1, 1, 1)}) {
    const CameraPose pose = make_lookat_pose(pos, Eigen::Vector3d::Zero());
    const PixelProjection pp = project_point(intr, pose, Eigen::Vector3d::Zero());
    REQUIRE(pp.valid);
    CHECK(std::abs(pp.u - intr.cx) < 1e-9);
    CHECK(std::abs(pp.v - intr.cy) < 1e-9);
    CHECK(pp.depth == doctest::Approx(pos.norm()).epsilon(1e-12));
  }
}

TEST_CASE("lookat handles degenerate up hint") {
  // View direction parallel to the up hint: falls back to the x-axis hint.
  const CameraPose pose =
      make_lookat_pose(Eigen::Vector3d(0, 2, 0), Eigen::Vector3d::Zero(), Eigen::Vector3d(0, 1, 0));
  CHECK((pose.R * pose.R.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  CHECK(pose.R.determinant() == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(make_lookat_pose(Eigen::Vector3d(1, 1, 1), Eigen::Vector3d(1, 1, 1)),
                  std::invalid_argument);
}

TEST_CASE("generated layouts have the right counts and pose invariants") {
  const CameraIntrinsics intr = test_intrinsics();
  const ViewLayout full = paper_layout(intr);
  CHECK(full.size() == 96);

  const ViewLayout ring = generate_layout({30}, 16, 1.8, intr);
  CHECK(ring.size() == 16);

  const ViewLayout single = generate_layout({0}, 1, 2.0, intr);
  CHECK(single.size() == 1);
  CHECK((single.poses[0].center() - Eigen::Vector3d(2, 0, 0)).norm() < 1e-12);

  for (const CameraPose& pose : full.poses) {
    CHECK((pose.R * pose.R.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-9);
    CHECK(std::abs(pose.R.determinant() - 1.0) < 1e-9);
    // Principal axis passes through the origin.
    const Eigen::Vector3d c = pose.center();
    const Eigen::Vector3d z = pose.R.row(2);
    CHECK(c.cross(z).norm() < 1e-9);
  }

  // Unique (elevation, azimuth) pairs.
  for (std::size_t i = 0; i < full.size(); ++i) {
    for (std::size_t j = i + 1; j < full.size(); ++j) {
      const bool same = full.meta[i].elevation_deg == full.meta[j].elevation_deg &&
                        full.meta[i].azimuth_deg == full.meta[j].azimuth_deg;
      if (same) FAIL("duplicate (elevation, azimuth)");
    }
  }

  CHECK_THROWS_AS(generate_layout({}, 16, 1.8, intr), std::invalid_argument);
  CHECK_THROWS_AS(generate_layout({30}, 0, 1.8, intr), std::invalid_argument);
}

TEST_CASE("relative transforms compose as a group") {
  const CameraIntrinsics intr = test_intrinsics();
  const ViewLayout layout = paper_layout(intr);

  const CameraPose rel_self = relative_transform(layout.poses[3], layout.poses[3]);
  CHECK((rel_self.R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(rel_self.T.norm() < 1e-12);

  // Pure rotation about z by 90 degrees, both cameras at the origin.
  CameraPose a, b;
  b.R = Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const CameraPose rel = relative_transform(a, b);
  CHECK((rel.R - b.R).norm() < 1e-12);
  CHECK(rel.T.norm() < 1e-12);

  // Chain consistency rel(a,c) == rel(b,c) o rel(a,b).
  const CameraPose& pa = layout.poses[5];
  const CameraPose& pb = layout.poses[40];
  const CameraPose& pc = layout.poses[77];
  const CameraPose ab = relative_transform(pa, pb);
  const CameraPose bc = relative_transform(pb, pc);
  const CameraPose ac = relative_transform(pa, pc);
  CHECK((bc.R * ab.R - ac.R).norm() < 1e-12);
  CHECK((bc.R * ab.T + bc.T - ac.T).norm() < 1e-12);
}

TEST_CASE("project/unproject are mutual inverses; behind-camera flagged") {
  const CameraIntrinsics intr = test_intrinsics();
  DeterministicRng rng(21);
  const ViewLayout layout = paper_layout(intr);

  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const CameraPose& pose = layout.poses[trial % layout.size()];
    const Eigen::Vector3d p = random_unit_ball_point(rng);
    const PixelProjection pp = project_point(intr, pose, p);
    if (!pp.valid) continue;
    const Eigen::Vector3d back = unproject_pixel(intr, pose, pp.u, pp.v, pp.depth);
    CHECK((back - p).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked > 150);

  const CameraPose pose = make_lookat_pose(Eigen::Vector3d(0, 0, 2), Eigen::Vector3d::Zero());
  const PixelProjection behind = project_point(intr, pose, Eigen::Vector3d(0, 0, 5));
  CHECK(!behind.valid);
}

TEST_CASE("fundamental matrix: epipolar residuals, epipole, rank, degeneracy") {
  const CameraIntrinsics intr = test_intrinsics();
  const ViewLayout layout = paper_layout(intr);
  DeterministicRng rng(31);

  double worst = 0.0;
  int pairs_checked = 0;
  while (pairs_checked < 20) {
    const int i = static_cast<int>(rng.next_u64() % layout.size());
    const int j = static_cast<int>(rng.next_u64() % layout.size());
    if (i == j) continue;
    const FundamentalMatrix fm =
        fundamental_matrix(intr, layout.poses[i], intr, layout.poses[j]);

    // Rank 2 within tolerance.
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(fm.F);
    CHECK(svd.singularValues()(2) / svd.singularValues()(0) < 1e-9);
    CHECK(std::abs(fm.F.norm() - 1.0) < 1e-12);

    int points_checked = 0;
    while (points_checked < 100) {
      const Eigen::Vector3d p = random_unit_ball_point(rng);
      const PixelProjection p1 = project_point(intr, layout.poses[i], p);
      const PixelProjection p2 = project_point(intr, layout.poses[j], p);
      if (!p1.valid || !p2.valid) continue;
      worst = std::max(worst, fm.residual(Eigen::Vector3d(p1.u, p1.v, 1.0),
                                          Eigen::Vector3d(p2.u, p2.v, 1.0)));
      ++points_checked;
    }

    // The epipole (projection of camera j's center into camera i) is F's null vector.
    const PixelProjection ep = project_point(intr, layout.poses[i], layout.poses[j].center());
    if (ep.valid) {
      CHECK((fm.F * Eigen::Vector3d(ep.u, ep.v, 1.0).normalized()).norm() < 1e-9);
    }
    ++pairs_checked;
  }
  CHECK(worst < 1e-9);

  // Identical centers: degenerate configuration.
  CameraPose a = layout.poses[0];
  CameraPose b;
  b.R = Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY()).toRotationMatrix() * a.R;
  b.T = -b.R * a.center();
  CHECK_THROWS_AS(fundamental_matrix(intr, a, intr, b), std::invalid_argument);
}

TEST_CASE("select_nearest_views matches the exhaustive oracle") {
  const CameraIntrinsics intr = test_intrinsics();

  const ViewLayout ring = generate_layout({30}, 16, 1.8, intr);
  CHECK(select_nearest_views(ring, 0, 1) == std::vector<int>{0});
  CHECK(select_nearest_views(ring, 0, 4) == std::vector<int>{0, 1, 15, 2});

  const std::vector<int> all = select_nearest_views(ring, 5, 16);
  std::vector<int> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 16; ++i) CHECK(sorted[i] == i);

  const ViewLayout full = paper_layout(intr);
  for (int target = 0; target < static_cast<int>(full.size()); ++target) {
    for (int k : {1, 2, 4, 8, 96}) {
      CHECK(select_nearest_views(full, target, k) == oracle_nearest(full, target, k));
    }
  }

  CHECK_THROWS_AS(select_nearest_views(ring, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(select_nearest_views(ring, 0, 17), std::invalid_argument);
  CHECK_THROWS_AS(select_nearest_views(ring, 16, 4), std::invalid_argument);
}

TEST_CASE("layout json round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "epiray_cam_test";
  fs::create_directories(dir);
  const std::string path = (dir / "cams.json").string();

  const ViewLayout layout = paper_layout(test_intrinsics());
  write_layout_json(layout, path);
  const ViewLayout back = read_layout_json(path);

  REQUIRE(back.size() == layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    CHECK((back.poses[i].R - layout.poses[i].R).norm() == 0.0);
    CHECK((back.poses[i].T - layout.poses[i].T).norm() == 0.0);
    CHECK(back.intrinsics[i].width == layout.intrinsics[i].width);
    CHECK(back.meta[i].azimuth_deg == layout.meta[i].azimuth_deg);
  }
  fs::remove_all(dir);
}
