#pragma once

#include <Eigen/Dense>
#include <vector>

#include "epiray/camera.hpp"
#include "epiray/linear.hpp"
#include "epiray/ray_sampling.hpp"
#include "epiray/tensor.hpp"

namespace epiray {

/// Origin-independent line coordinates (m, d) with m = o x d, ||d|| = 1.
struct PluckerRay {
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  Eigen::Vector3d d = Eigen::Vector3d::UnitZ();
};

/// If the ray direction is not unit-norm it is normalized first and
/// *renormalized (when given) is set.
PluckerRay plucker_coordinates(const Ray& ray, bool* renormalized = nullptr);

/// Ray-relative frame: a rotation R_c and center such that the defining ray
/// maps to origin (0,0,0) and direction (0,0,1).
/// R_c columns are [ y'/||y'|| x v' , y'/||y'|| , v' ] with v' the normalized
/// ray direction and y' the camera Y-axis made orthogonal to v'.
struct CanonicalFrame {
  Eigen::Matrix3d rc = Eigen::Matrix3d::Identity();
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  bool used_fallback = false;  // camera Y-axis was (near-)parallel to the ray

  Eigen::Vector3d apply_point(const Eigen::Vector3d& p) const { return rc.transpose() * (p - center); }
  Eigen::Vector3d apply_dir(const Eigen::Vector3d& d) const { return rc.transpose() * d; }
  Ray apply(const Ray& r) const { return {apply_point(r.origin), apply_dir(r.dir).normalized()}; }
  Ray invert(const Ray& r) const { return {rc * r.origin + center, (rc * r.dir).normalized()}; }

  /// The 3x4 matrix [R_c^T | -R_c^T center].
  Eigen::Matrix<double, 3, 4> matrix34() const;
};

/// Builds the frame from the camera extrinsics and a ray direction v (world
/// coordinates, nonzero). When the camera Y-axis is parallel to v (residual
/// norm < 1e-9) the camera X-axis is used as the up hint instead, flagged.
CanonicalFrame canonical_transform(const CameraPose& pose, const Eigen::Vector3d& v);

/// Maps each ray's origin and direction into the frame (directions by rotation
/// only, renormalized).
std::vector<Ray> canonicalize_neighbor_rays(const CanonicalFrame& frame,
                                            const std::vector<Ray>& rays);

struct HarmonicConfig {
  int num_frequencies = 4;       // L octaves
  double base_frequency = M_PI;  // f_l = base * 2^l

  std::size_t encoded_size(std::size_t n) const {
    return 2 * static_cast<std::size_t>(num_frequencies) * n;
  }
};

/// Sin/cos features per frequency: output is the concatenation over l of
/// [sin(f_l x_0..x_{n-1}), cos(f_l x_0..x_{n-1})]. L = 0 yields no output.
void harmonic_encode(const double* x, std::size_t n, const HarmonicConfig& cfg, double* out);
std::vector<double> harmonic_encode(const std::vector<double>& x, const HarmonicConfig& cfg);

/// Batch form: trailing dim n of x becomes 2*L*n.
Tensor harmonic_encode_rows(const Tensor& x, const HarmonicConfig& cfg);

/// features + proj(harmonic(plucker)); additive and shape-preserving.
/// plucker carries one 6-vector per feature row: same shape as features with
/// the trailing dim replaced by 6. proj must map 2*L*6 -> C.
Tensor inject_ray_encoding(const Tensor& features, const Tensor& plucker,
                           const HarmonicConfig& cfg, const LinearParams& proj);

}  // namespace epiray
