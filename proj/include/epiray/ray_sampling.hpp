#pragma once

#include <Eigen/Dense>
#include <vector>

#include "epiray/camera.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

struct Ray {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d dir = Eigen::Vector3d::UnitZ();  // unit norm

  Eigen::Vector3d point_at(double t) const { return origin + t * dir; }
};

/// One ray per feature-map patch, row-major over (row, col). Patch centers map
/// to image pixels ((col+0.5) W/fw, (row+0.5) H/fh); origins at the camera center.
std::vector<Ray> rays_from_feature_map(const CameraIntrinsics& intr, const CameraPose& pose,
                                       int feat_h, int feat_w);

/// Uniform depth-bin centers: near + (s+0.5)(far-near)/S.
std::vector<double> sample_depths(double near, double far, int s_count);

struct ReprojectedSample {
  double u = 0.0;
  double v = 0.0;
  bool valid = false;  // in front of the camera and inside [0,W)x[0,H)
};

/// Projects ray points at the given depths into a reference camera.
std::vector<ReprojectedSample> reproject_samples(const Ray& ray, const std::vector<double>& depths,
                                                 const CameraIntrinsics& ref_intr,
                                                 const CameraPose& ref_pose);

/// The four gather taps of one bilinear lookup. Pixel centers at integer+0.5;
/// border samples clamp to edge pixels. Shared by the gather and its backward
/// scatter so both use the identical arithmetic.
struct BilinearTaps {
  std::size_t idx[4];  // flat pixel indices into an [H,W,*] map
  double w[4];
};

BilinearTaps bilinear_taps(int height, int width, double u, double v);

/// Interpolated feature row of map [H,W,C] at pixel coordinates (u,v).
/// Throws std::out_of_range when (u,v) is outside [0,W)x[0,H).
void bilinear_sample(const Tensor& map, double u, double v, double* out);
Tensor bilinear_sample(const Tensor& map, double u, double v);

/// Reprojection geometry shared by the gather, its backward scatter, and the
/// attention block. Depends only on cameras and grid sizes, never on features,
/// so it can be computed once and reused.
///   valid [K,P,S]; uv [K,P,S,2] in image pixel coordinates; taps are the
///   bilinear gather taps in feature-grid coordinates (u fw/W, v fh/H).
struct SampleGeometry {
  std::vector<int> view_indices;  // [0] is the target view
  int target_index = 0;
  std::size_t feat_h = 0, feat_w = 0;
  std::size_t pixels = 0, s_samples = 0;
  double near = 0.0, far = 0.0;
  Tensor valid;
  Tensor uv;
  Tensor depths;  // [P,S], strictly increasing along S
  std::vector<BilinearTaps> taps;  // K*P*S, meaningful where valid
  std::vector<Ray> target_rays;    // P

  std::size_t k_views() const { return view_indices.size(); }
};

SampleGeometry build_sample_geometry(int target_index, const ViewLayout& layout, int feat_h,
                                     int feat_w, int k_views, int s_samples, double near,
                                     double far);

/// Gathers features [K,P,S,C] from per-view maps [fh,fw,C]; invalid entries
/// stay exactly 0.
Tensor gather_volume(const SampleGeometry& geo, const std::vector<Tensor>& feature_maps);

/// Backward of gather_volume: scatters each valid sample's gradient back into
/// the per-view map gradients with the same four bilinear weights.
void scatter_volume_grad(const SampleGeometry& geo, const Tensor& grad_features,
                         std::vector<Tensor>& map_grads);

/// The sampled feature volume over the K nearest views.
///   features [K, H*W, S, C]  gathered reference features, exactly 0 where invalid
///   valid    [K, H*W, S]     1.0/0.0 validity of each sample
///   depths   [H*W, S]        strictly increasing along S (shared across pixels)
///   uv       [K, H*W, S, 2]  reprojected image pixel coordinates (0 where invalid)
/// view_indices[0] is the target view.
struct EpipolarSampleMap {
  Tensor features;
  Tensor valid;
  Tensor depths;
  Tensor uv;
  std::vector<int> view_indices;
  int target_index = 0;
  double near = 0.0;
  double far = 0.0;
};

EpipolarSampleMap build_sample_volume(int target_index, const ViewLayout& layout,
                                      const std::vector<Tensor>& feature_maps, int k_views,
                                      int s_samples, double near, double far);

/// Defaults for unit-sphere-normalized scenes: camera distance -/+ 1.
void default_near_far(const ViewLayout& layout, int view_index, double* near, double* far);

}  // namespace epiray
