#include "epiray/camera.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace epiray {

namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

CameraIntrinsics::CameraIntrinsics(int w, int h, double fov_y_rad)
    : width(w), height(h), fov_y(fov_y_rad), cx(w / 2.0), cy(h / 2.0) {
  if (w < 1 || h < 1) throw std::invalid_argument("CameraIntrinsics: size must be >= 1");
  if (!(fov_y_rad > 0.0 && fov_y_rad < std::numbers::pi)) {
    throw std::invalid_argument("CameraIntrinsics: fov_y must be in (0, pi)");
  }
}

double CameraIntrinsics::focal() const { return (height / 2.0) / std::tan(fov_y / 2.0); }

Eigen::Matrix3d CameraIntrinsics::matrix() const {
  const double f = focal();
  Eigen::Matrix3d k;
  k << f, 0, cx, 0, f, cy, 0, 0, 1;
  return k;
}

Eigen::Matrix3d CameraIntrinsics::inverse_matrix() const {
  const double f = focal();
  Eigen::Matrix3d k;
  k << 1 / f, 0, -cx / f, 0, 1 / f, -cy / f, 0, 0, 1;
  return k;
}

CameraPose make_lookat_pose(const Eigen::Vector3d& position, const Eigen::Vector3d& target,
                            const Eigen::Vector3d& up_hint) {
  const Eigen::Vector3d fwd = target - position;
  if (fwd.norm() < 1e-12) throw std::invalid_argument("make_lookat_pose: position == target");
  const Eigen::Vector3d z = fwd.normalized();

  Eigen::Vector3d x = z.cross(up_hint);
  if (x.norm() < 1e-9) x = z.cross(Eigen::Vector3d(1, 0, 0));
  if (x.norm() < 1e-9) x = z.cross(Eigen::Vector3d(0, 1, 0));
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);

  CameraPose pose;
  pose.R.row(0) = x;
  pose.R.row(1) = y;
  pose.R.row(2) = z;
  pose.T = -pose.R * position;
  return pose;
}

ViewLayout generate_layout(const std::vector<double>& elevations_deg, int azimuth_count,
                           double radius, const CameraIntrinsics& intr) {
  if (elevations_deg.empty()) throw std::invalid_argument("generate_layout: no elevations");
  if (azimuth_count < 1) throw std::invalid_argument("generate_layout: azimuth_count must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("generate_layout: radius must be > 0");

  ViewLayout layout;
  for (double elev : elevations_deg) {
    const double e = elev * kDegToRad;
    for (int j = 0; j < azimuth_count; ++j) {
      const double az_deg = 360.0 * j / azimuth_count;
      const double a = az_deg * kDegToRad;
      const Eigen::Vector3d pos(radius * std::cos(e) * std::cos(a), radius * std::sin(e),
                                radius * std::cos(e) * std::sin(a));
      layout.intrinsics.push_back(intr);
      layout.poses.push_back(make_lookat_pose(pos, Eigen::Vector3d::Zero()));
      layout.meta.push_back({elev, az_deg, radius});
    }
  }
  return layout;
}

CameraPose relative_transform(const CameraPose& a, const CameraPose& b) {
  CameraPose rel;
  rel.R = b.R * a.R.transpose();
  rel.T = b.T - rel.R * a.T;
  return rel;
}

PixelProjection project_point(const CameraIntrinsics& intr, const CameraPose& pose,
                              const Eigen::Vector3d& point) {
  const Eigen::Vector3d pc = pose.world_to_camera(point);
  PixelProjection out;
  out.depth = pc.z();
  if (pc.z() <= 1e-9) return out;  // at or behind the camera: flagged, not thrown
  const double f = intr.focal();
  out.u = intr.cx + f * pc.x() / pc.z();
  out.v = intr.cy + f * pc.y() / pc.z();
  out.valid = true;
  return out;
}

Eigen::Vector3d unproject_pixel(const CameraIntrinsics& intr, const CameraPose& pose, double u,
                                double v, double depth) {
  const double f = intr.focal();
  const Eigen::Vector3d pc((u - intr.cx) / f * depth, (v - intr.cy) / f * depth, depth);
  return pose.camera_to_world(pc);
}

FundamentalMatrix fundamental_matrix(const CameraIntrinsics& intr1, const CameraPose& pose1,
                                     const CameraIntrinsics& intr2, const CameraPose& pose2) {
  const CameraPose rel = relative_transform(pose1, pose2);
  if (rel.T.norm() < 1e-9) {
    throw std::invalid_argument("fundamental_matrix: camera centers coincide (zero baseline)");
  }
  Eigen::Matrix3d tx;
  tx << 0, -rel.T.z(), rel.T.y(), rel.T.z(), 0, -rel.T.x(), -rel.T.y(), rel.T.x(), 0;
  FundamentalMatrix fm;
  fm.F = intr2.inverse_matrix().transpose() * tx * rel.R * intr1.inverse_matrix();
  fm.F /= fm.F.norm();
  return fm;
}

std::vector<int> select_nearest_views(const ViewLayout& layout, int target_index, int k) {
  const int n = static_cast<int>(layout.size());
  if (target_index < 0 || target_index >= n) {
    throw std::invalid_argument("select_nearest_views: target index out of range");
  }
  if (k < 1 || k > n) {
    throw std::invalid_argument("select_nearest_views: K=" + std::to_string(k) +
                                " out of range 1.." + std::to_string(n));
  }

  const Eigen::Vector3d c0 = layout.poses[target_index].center().normalized();
  struct Entry {
    double angle;
    int index;
  };
  std::vector<Entry> entries;
  entries.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    if (i == target_index) continue;
    const Eigen::Vector3d ci = layout.poses[i].center().normalized();
    entries.push_back({std::atan2(c0.cross(ci).norm(), c0.dot(ci)), i});
  }
  // Angles within 1e-9 rad are ties; layouts never place views that close, so
  // the epsilon only absorbs floating-point noise in symmetric configurations.
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (std::abs(a.angle - b.angle) < 1e-9) return a.index < b.index;
    return a.angle < b.angle;
  });

  std::vector<int> out;
  out.reserve(k);
  out.push_back(target_index);
  for (int i = 0; i < k - 1; ++i) out.push_back(entries[i].index);
  return out;
}

void write_layout_json(const ViewLayout& layout, const std::string& path) {
  nlohmann::json views = nlohmann::json::array();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const CameraPose& pose = layout.poses[i];
    const CameraIntrinsics& intr = layout.intrinsics[i];
    std::vector<double> rot(9);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot[r * 3 + c] = pose.R(r, c);
    views.push_back({{"index", i},
                     {"elevation_deg", layout.meta[i].elevation_deg},
                     {"azimuth_deg", layout.meta[i].azimuth_deg},
                     {"radius", layout.meta[i].radius},
                     {"rotation", rot},
                     {"translation", {pose.T.x(), pose.T.y(), pose.T.z()}},
                     {"width", intr.width},
                     {"height", intr.height},
                     {"fov_y_deg", intr.fov_y / kDegToRad}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_layout_json: cannot open " + path);
  out << nlohmann::json{{"views", views}}.dump(2) << "\n";
}

ViewLayout read_layout_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_layout_json: cannot open " + path);
  nlohmann::json doc;
  in >> doc;

  ViewLayout layout;
  for (const auto& view : doc.at("views")) {
    CameraIntrinsics intr(view.at("width").get<int>(), view.at("height").get<int>(),
                          view.at("fov_y_deg").get<double>() * kDegToRad);
    CameraPose pose;
    const auto rot = view.at("rotation");
    if (rot.size() != 9) throw std::runtime_error("read_layout_json: rotation needs 9 entries");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) pose.R(r, c) = rot[r * 3 + c].get<double>();
    const auto tr = view.at("translation");
    if (tr.size() != 3) throw std::runtime_error("read_layout_json: translation needs 3 entries");
    for (int r = 0; r < 3; ++r) pose.T(r) = tr[r].get<double>();

    layout.intrinsics.push_back(intr);
    layout.poses.push_back(pose);
    layout.meta.push_back({view.value("elevation_deg", 0.0), view.value("azimuth_deg", 0.0),
                           view.value("radius", 0.0)});
  }
  return layout;
}

}  // namespace epiray
