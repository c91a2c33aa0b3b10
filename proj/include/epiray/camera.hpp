#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace epiray {

/// Pinhole intrinsics. Square pixels; focal length is derived from the vertical
/// field of view: f = (height/2) / tan(fov_y/2). Pixel centers sit at
/// integer + 0.5, so the default principal point (w/2, h/2) is the image center.
struct CameraIntrinsics {
  int width = 0;
  int height = 0;
  double fov_y = 0.0;  // radians
  double cx = 0.0;
  double cy = 0.0;

  CameraIntrinsics() = default;
  CameraIntrinsics(int w, int h, double fov_y_rad);

  double focal() const;
  Eigen::Matrix3d matrix() const;          // K
  Eigen::Matrix3d inverse_matrix() const;  // K^-1, closed form
};

/// World-to-camera rigid transform: x_cam = R x_world + T.
/// Camera frame: +x right, +y down, +z forward (principal axis).
struct CameraPose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d T = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -R.transpose() * T; }
  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& p) const { return R * p + T; }
  Eigen::Vector3d camera_to_world(const Eigen::Vector3d& p) const { return R.transpose() * (p - T); }
};

struct ViewMeta {
  double elevation_deg = 0.0;
  double azimuth_deg = 0.0;
  double radius = 0.0;
};

/// A set of origin-directed cameras on a sphere: one ring per elevation.
struct ViewLayout {
  std::vector<CameraIntrinsics> intrinsics;
  std::vector<CameraPose> poses;
  std::vector<ViewMeta> meta;

  std::size_t size() const { return poses.size(); }
};

/// Two-view epipolar matrix, rank 2, normalized to unit Frobenius norm.
struct FundamentalMatrix {
  Eigen::Matrix3d F = Eigen::Matrix3d::Zero();

  /// Residual |p2^T F p1| with both homogeneous pixels normalized to unit length.
  double residual(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2) const {
    return std::abs(p2.normalized().dot(F * p1.normalized()));
  }
};

/// Camera at `position` with the principal axis through `target`.
/// If up_hint is (near-)parallel to the view direction, falls back to (1,0,0),
/// then (0,1,0). Throws std::invalid_argument when position == target.
CameraPose make_lookat_pose(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                            const Eigen::Vector3d& up_hint = Eigen::Vector3d(0, 1, 0));

/// One ring of `azimuth_count` cameras per elevation, all looking at the origin.
/// World frame is y-up: position = r (cos e cos a, sin e, cos e sin a),
/// azimuth a_j = 360 j / azimuth_count degrees.
ViewLayout generate_layout(const std::vector<double>& elevations_deg, int azimuth_count,
                           double radius, const CameraIntrinsics& intr);

/// Composition mapping a-camera coordinates to b-camera coordinates.
CameraPose relative_transform(const CameraPose& a, const CameraPose& b);

struct PixelProjection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-z
  bool valid = false;  // false when the point is at or behind the camera plane
};

PixelProjection project_point(const CameraIntrinsics& intr, const CameraPose& pose,
                              const Eigen::Vector3d& point);

/// World point on the viewing ray of pixel (u,v) at camera-z `depth`.
Eigen::Vector3d unproject_pixel(const CameraIntrinsics& intr, const CameraPose& pose, double u,
                                double v, double depth);

/// F = K2^-T [t]x R K1^-1 for the relative pose cam1 -> cam2, unit Frobenius norm.
/// Throws std::invalid_argument when the camera centers coincide (baseline < 1e-9).
FundamentalMatrix fundamental_matrix(const CameraIntrinsics& intr1, const CameraPose& pose1,
                                     const CameraIntrinsics& intr2, const CameraPose& pose2);

/// K view indices: the target first, then the K-1 nearest by great-circle angle
/// between camera-center unit vectors. Angles closer than 1e-9 rad count as
/// ties and are broken by ascending view index.
std::vector<int> select_nearest_views(const ViewLayout& layout, int target_index, int k);

void write_layout_json(const ViewLayout& layout, const std::string& path);
ViewLayout read_layout_json(const std::string& path);

}  // namespace epiray
