#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "epiray/camera.hpp"
#include "epiray/ray_sampling.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

/// Analytic test scenes, both contained in the unit sphere at the origin.
/// Shading is albedo-only, so a surface point has the same color from every
/// viewpoint and epipolar correspondences are exact color matches.
struct SphereScene {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double radius = 0.8;
  // Per-channel band-limited pattern over the unit normal:
  // color_c(n) = 0.5 + amp * sin(freq * dot(n, axis_c) + phase_c).
  double freq = 2.5;
  double amp = 0.35;
};

struct VoxelScene {
  int resolution = 8;     // cells per axis
  double extent = 0.5;    // grid spans [-extent, extent]^3
  std::vector<std::uint8_t> occupancy;  // resolution^3, x-fastest
  std::vector<double> colors;           // resolution^3 * 3
};

struct SyntheticScene {
  enum class Kind { Sphere, Voxel };
  Kind kind = Kind::Sphere;
  SphereScene sphere;
  VoxelScene voxel;
};

SyntheticScene make_sphere_scene(double radius = 0.8);
/// Deterministic blocky scene: seeded occupancy (~20% fill) with procedural colors.
SyntheticScene make_voxel_scene(std::uint64_t seed = 0, int resolution = 8);

/// First intersection along a ray. Returns false on miss; otherwise writes the
/// ray parameter (distance, scene units) and the albedo color.
bool raycast(const SyntheticScene& scene, const Ray& ray, double* t_out, double rgb_out[3]);

struct RenderedView {
  Tensor rgb;    // [H,W,3] in [0,1]; background white
  Tensor depth;  // [H,W] distance along the unit pixel ray; 0 = miss
};

RenderedView raycast_render(const SyntheticScene& scene, const CameraIntrinsics& intr,
                            const CameraPose& pose, int height, int width);

struct MultiviewRenderSet {
  ViewLayout layout;
  std::vector<RenderedView> views;
};

MultiviewRenderSet make_dataset(const SyntheticScene& scene, const ViewLayout& layout, int height,
                                int width);

/// Epipolar correspondence statistics: for every foreground target pixel, picks
/// the depth bin nearest the rendered depth, reprojects into each of the K
/// nearest views, and compares bilinear reference color against the target
/// pixel. Reference samples whose rendered depth is closer than the sample by
/// more than occlusion_tol are excluded and counted. occlusion_tol <= 0 picks
/// the default 0.75 * (far-near)/S.
struct CorrespondenceReport {
  bool empty = true;  // no foreground pixels
  std::size_t foreground_pixels = 0;
  std::size_t attempted = 0;
  std::size_t included = 0;
  std::size_t occluded_excluded = 0;
  double hit_rate = 0.0;
  double mean_color_err = 0.0;
  double max_color_err = 0.0;
};

CorrespondenceReport oracle_correspondence_check(const MultiviewRenderSet& renders,
                                                 int target_index, int k_views, int s_samples,
                                                 double near, double far,
                                                 double occlusion_tol = -1.0);

/// 8-bit binary PPM (P6) export for eyeballing renders.
void write_ppm(const Tensor& rgb, const std::string& path);

}  // namespace epiray
