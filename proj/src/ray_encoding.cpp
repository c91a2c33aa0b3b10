#include "epiray/ray_encoding.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray {

PluckerRay plucker_coordinates(const Ray& ray, bool* renormalized) {
  Eigen::Vector3d d = ray.dir;
  const double n = d.norm();
  if (renormalized) *renormalized = false;
  if (std::abs(n - 1.0) > 1e-12) {
    if (n < 1e-15) throw std::invalid_argument("plucker_coordinates: zero direction");
    d /= n;
    if (renormalized) *renormalized = true;
  }
  return {ray.origin.cross(d), d};
}

Eigen::Matrix<double, 3, 4> CanonicalFrame::matrix34() const {
  Eigen::Matrix<double, 3, 4> t;
  t.block<3, 3>(0, 0) = rc.transpose();
  t.col(3) = -rc.transpose() * center;
  return t;
}

CanonicalFrame canonical_transform(const CameraPose& pose, const Eigen::Vector3d& v) {
  if (v.norm() < 1e-15) throw std::invalid_argument("canonical_transform: zero ray direction");
  const Eigen::Vector3d vp = v.normalized();

  Eigen::Vector3d y = pose.R.row(1);  // camera Y-axis in world coordinates
  Eigen::Vector3d yp = y - y.dot(vp) * vp;
  CanonicalFrame frame;
  if (yp.norm() < 1e-9) {
    y = pose.R.row(0);
    yp = y - y.dot(vp) * vp;
    frame.used_fallback = true;
  }
  yp.normalize();

  frame.rc.col(0) = yp.cross(vp);
  frame.rc.col(1) = yp;
  frame.rc.col(2) = vp;
  frame.center = pose.center();
  return frame;
}

std::vector<Ray> canonicalize_neighbor_rays(const CanonicalFrame& frame,
                                            const std::vector<Ray>& rays) {
  std::vector<Ray> out;
  out.reserve(rays.size());
  for (const Ray& r : rays) out.push_back(frame.apply(r));
  return out;
}

void harmonic_encode(const double* x, std::size_t n, const HarmonicConfig& cfg, double* out) {
  double freq = cfg.base_frequency;
  for (int l = 0; l < cfg.num_frequencies; ++l, freq *= 2.0) {
    for (std::size_t i = 0; i < n; ++i) out[(2 * l) * n + i] = std::sin(freq * x[i]);
    for (std::size_t i = 0; i < n; ++i) out[(2 * l + 1) * n + i] = std::cos(freq * x[i]);
  }
}

std::vector<double> harmonic_encode(const std::vector<double>& x, const HarmonicConfig& cfg) {
  std::vector<double> out(cfg.encoded_size(x.size()));
  harmonic_encode(x.data(), x.size(), cfg, out.data());
  return out;
}

Tensor harmonic_encode_rows(const Tensor& x, const HarmonicConfig& cfg) {
  if (x.rank() == 0) throw std::invalid_argument("harmonic_encode_rows: rank-0 input");
  if (cfg.num_frequencies < 1) {
    // The scalar harmonic_encode supports L = 0 (empty output); a tensor cannot
    // carry a zero trailing dim, so the batched form requires L >= 1.
    throw std::invalid_argument("harmonic_encode_rows: need num_frequencies >= 1");
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  std::vector<std::size_t> shape = x.shape();
  shape.back() = cfg.encoded_size(n);
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    harmonic_encode(x.data() + r * n, n, cfg, out.data() + r * cfg.encoded_size(n));
  }
  return out;
}

Tensor inject_ray_encoding(const Tensor& features, const Tensor& plucker,
                           const HarmonicConfig& cfg, const LinearParams& proj) {
  if (plucker.shape().back() != 6) {
    throw std::invalid_argument("inject_ray_encoding: plucker trailing dim must be 6, got " +
                                shape_to_string(plucker.shape()));
  }
  if (plucker.size() / 6 != features.size() / features.shape().back()) {
    throw_shape_mismatch("inject_ray_encoding", features.shape(), plucker.shape());
  }
  if (proj.in_dim() != cfg.encoded_size(6) || proj.out_dim() != features.shape().back()) {
    throw std::invalid_argument("inject_ray_encoding: proj maps " + std::to_string(proj.in_dim()) +
                                "->" + std::to_string(proj.out_dim()) + ", need " +
                                std::to_string(cfg.encoded_size(6)) + "->" +
                                std::to_string(features.shape().back()));
  }
  const Tensor enc = harmonic_encode_rows(plucker, cfg);
  Tensor projected = linear_forward(proj, enc);
  Tensor out = features;
  double* po = out.data();
  const double* pp = projected.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] += pp[i];
  return out;
}

}  // namespace epiray
