#include "epiray/scene.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "epiray/rng.hpp"

namespace epiray {

namespace {

// Fixed texture axes, one per channel; unit vectors.
const Eigen::Vector3d kAxes[3] = {
    Eigen::Vector3d(1.0, 0.3, -0.2).normalized(),
    Eigen::Vector3d(-0.4, 1.0, 0.5).normalized(),
    Eigen::Vector3d(0.2, -0.6, 1.0).normalized(),
};
constexpr double kPhases[3] = {0.0, 1.3, 2.1};

void sphere_color(const SphereScene& s, const Eigen::Vector3d& normal, double rgb[3]) {
  for (int c = 0; c < 3; ++c) {
    rgb[c] = 0.5 + s.amp * std::sin(s.freq * normal.dot(kAxes[c]) + kPhases[c]);
  }
}

bool raycast_sphere(const SphereScene& s, const Ray& ray, double* t_out, double rgb_out[3]) {
  const Eigen::Vector3d oc = ray.origin - s.center;
  const double b = oc.dot(ray.dir);
  const double disc = b * b - (oc.squaredNorm() - s.radius * s.radius);
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 1e-9) t = -b + sq;  // origin inside the sphere
  if (t <= 1e-9) return false;
  *t_out = t;
  sphere_color(s, (ray.point_at(t) - s.center) / s.radius, rgb_out);
  return true;
}

// Amanatides-Woo grid traversal.
bool raycast_voxel(const VoxelScene& vs, const Ray& ray, double* t_out, double rgb_out[3]) {
  const int m = vs.resolution;
  const double cell = 2.0 * vs.extent / m;

  // Entry/exit of the bounding box.
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.dir[a];
    if (std::abs(d) < 1e-15) {
      if (o < -vs.extent || o > vs.extent) return false;
      continue;
    }
    double ta = (-vs.extent - o) / d;
    double tb = (vs.extent - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 >= t1) return false;

  const double t_enter = std::max(t0, 1e-9);
  const Eigen::Vector3d entry = ray.point_at(t_enter + 1e-12);
  int ix[3];
  for (int a = 0; a < 3; ++a) {
    ix[a] = std::clamp(static_cast<int>(std::floor((entry[a] + vs.extent) / cell)), 0, m - 1);
  }

  int step[3];
  double t_max[3], t_delta[3];
  for (int a = 0; a < 3; ++a) {
    const double d = ray.dir[a];
    if (std::abs(d) < 1e-15) {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    } else {
      step[a] = d > 0 ? 1 : -1;
      const double boundary = -vs.extent + cell * (ix[a] + (d > 0 ? 1 : 0));
      t_max[a] = (boundary - ray.origin[a]) / d;
      t_delta[a] = cell / std::abs(d);
    }
  }

  double t_cell = t_enter;
  while (true) {
    const std::size_t idx =
        static_cast<std::size_t>((ix[2] * m + ix[1]) * m + ix[0]);
    if (vs.occupancy[idx]) {
      *t_out = t_cell;
      for (int c = 0; c < 3; ++c) rgb_out[c] = vs.colors[idx * 3 + c];
      return true;
    }
    int axis = 0;
    if (t_max[1] < t_max[axis]) axis = 1;
    if (t_max[2] < t_max[axis]) axis = 2;
    t_cell = t_max[axis];
    ix[axis] += step[axis];
    if (ix[axis] < 0 || ix[axis] >= m || t_cell > t1) return false;
    t_max[axis] += t_delta[axis];
  }
}

}  // namespace

SyntheticScene make_sphere_scene(double radius) {
  SyntheticScene s;
  s.kind = SyntheticScene::Kind::Sphere;
  s.sphere.radius = radius;
  return s;
}

SyntheticScene make_voxel_scene(std::uint64_t seed, int resolution) {
  SyntheticScene s;
  s.kind = SyntheticScene::Kind::Voxel;
  VoxelScene& vs = s.voxel;
  vs.resolution = resolution;
  const std::size_t cells = static_cast<std::size_t>(resolution) * resolution * resolution;
  vs.occupancy.assign(cells, 0);
  vs.colors.assign(cells * 3, 0.0);

  DeterministicRng rng(seed ^ 0x5CE11Eull);
  for (std::size_t i = 0; i < cells; ++i) {
    vs.occupancy[i] = rng.uniform() < 0.2 ? 1 : 0;
    for (int c = 0; c < 3; ++c) vs.colors[i * 3 + c] = 0.1 + 0.8 * rng.uniform();
  }
  // Keep the center cell solid so renders are never empty.
  vs.occupancy[(resolution / 2 * resolution + resolution / 2) * resolution + resolution / 2] = 1;
  return s;
}

bool raycast(const SyntheticScene& scene, const Ray& ray, double* t_out, double rgb_out[3]) {
  return scene.kind == SyntheticScene::Kind::Sphere ? raycast_sphere(scene.sphere, ray, t_out, rgb_out)
                                                    : raycast_voxel(scene.voxel, ray, t_out, rgb_out);
}

RenderedView raycast_render(const SyntheticScene& scene, const CameraIntrinsics& intr,
                            const CameraPose& pose, int height, int width) {
  RenderedView out;
  out.rgb = Tensor::full({static_cast<std::size_t>(height), static_cast<std::size_t>(width), 3}, 1.0);
  out.depth = Tensor({static_cast<std::size_t>(height), static_cast<std::size_t>(width)});

  const std::vector<Ray> rays = rays_from_feature_map(intr, pose, height, width);
  for (std::size_t p = 0; p < rays.size(); ++p) {
    double t;
    double rgb[3];
    if (raycast(scene, rays[p], &t, rgb)) {
      out.depth[p] = t;
      for (int c = 0; c < 3; ++c) out.rgb[p * 3 + c] = rgb[c];
    }
  }
  return out;
}

MultiviewRenderSet make_dataset(const SyntheticScene& scene, const ViewLayout& layout, int height,
                                int width) {
  MultiviewRenderSet set;
  set.layout = layout;
  set.views.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    set.views.push_back(raycast_render(scene, layout.intrinsics[i], layout.poses[i], height, width));
  }
  return set;
}

CorrespondenceReport oracle_correspondence_check(const MultiviewRenderSet& renders,
                                                 int target_index, int k_views, int s_samples,
                                                 double near, double far, double occlusion_tol) {
  const ViewLayout& layout = renders.layout;
  const RenderedView& target = renders.views.at(target_index);
  const int h = static_cast<int>(target.rgb.dim(0));
  const int w = static_cast<int>(target.rgb.dim(1));
  if (occlusion_tol <= 0.0) occlusion_tol = 0.75 * (far - near) / s_samples;

  const std::vector<int> views = select_nearest_views(layout, target_index, k_views);
  const std::vector<Ray> rays = rays_from_feature_map(layout.intrinsics[target_index],
                                                      layout.poses[target_index], h, w);
  const std::vector<double> bins = sample_depths(near, far, s_samples);

  CorrespondenceReport rep;
  double err_sum = 0.0;
  for (int p = 0; p < h * w; ++p) {
    const double gt_t = target.depth[p];
    if (gt_t <= 0.0) continue;
    ++rep.foreground_pixels;

    std::size_t best = 0;
    for (std::size_t s = 1; s < bins.size(); ++s) {
      if (std::abs(bins[s] - gt_t) < std::abs(bins[best] - gt_t)) best = s;
    }
    const Eigen::Vector3d x = rays[p].point_at(bins[best]);

    for (int view : views) {
      ++rep.attempted;
      const RenderedView& ref = renders.views[view];
      const PixelProjection pp = project_point(layout.intrinsics[view], layout.poses[view], x);
      if (!pp.valid || pp.u < 0.0 || pp.u >= w || pp.v < 0.0 || pp.v >= h) continue;

      // Occlusion test against the reference render's own depth (nearest pixel).
      const int px = std::clamp(static_cast<int>(pp.u), 0, w - 1);
      const int py = std::clamp(static_cast<int>(pp.v), 0, h - 1);
      const double ref_t = ref.depth[static_cast<std::size_t>(py) * w + px];
      const double sample_dist = (x - layout.poses[view].center()).norm();
      if (ref_t <= 0.0 || ref_t < sample_dist - occlusion_tol) {
        ++rep.occluded_excluded;
        continue;
      }

      double color[3];
      bilinear_sample(ref.rgb, pp.u, pp.v, color);
      double err = 0.0;
      for (int c = 0; c < 3; ++c) err = std::max(err, std::abs(color[c] - target.rgb[p * 3 + c]));
      err_sum += err;
      rep.max_color_err = std::max(rep.max_color_err, err);
      ++rep.included;
    }
  }

  if (rep.foreground_pixels == 0) return rep;
  rep.empty = false;
  rep.hit_rate = static_cast<double>(rep.included) / static_cast<double>(rep.attempted);
  rep.mean_color_err = rep.included ? err_sum / static_cast<double>(rep.included) : 0.0;
  return rep;
}

void write_ppm(const Tensor& rgb, const std::string& path) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) {
    throw std::invalid_argument("write_ppm: need [H,W,3], got " + shape_to_string(rgb.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  out << "P6\n" << rgb.dim(1) << " " << rgb.dim(0) << "\n255\n";
  for (std::size_t i = 0; i < rgb.size(); ++i) {
    const double v = std::clamp(rgb[i], 0.0, 1.0);
    out.put(static_cast<char>(std::lround(v * 255.0)));
  }
}

}  // namespace epiray
