#include "epiray/ray_sampling.hpp"

#include <cmath>
#include <stdexcept>

namespace epiray {

std::vector<Ray> rays_from_feature_map(const CameraIntrinsics& intr, const CameraPose& pose,
                                       int feat_h, int feat_w) {
  if (feat_h < 1 || feat_w < 1) {
    throw std::invalid_argument("rays_from_feature_map: feature dims must be >= 1");
  }
  const Eigen::Vector3d center = pose.center();
  const Eigen::Matrix3d rt = pose.R.transpose();
  const double f = intr.focal();
  const double sx = static_cast<double>(intr.width) / feat_w;
  const double sy = static_cast<double>(intr.height) / feat_h;

  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(feat_h) * feat_w);
  for (int i = 0; i < feat_h; ++i) {
    for (int j = 0; j < feat_w; ++j) {
      const double u = (j + 0.5) * sx;
      const double v = (i + 0.5) * sy;
      const Eigen::Vector3d dir_cam((u - intr.cx) / f, (v - intr.cy) / f, 1.0);
      rays.push_back({center, (rt * dir_cam).normalized()});
    }
  }
  return rays;
}

std::vector<double> sample_depths(double near, double far, int s_count) {
  if (!(near > 0.0) || !(far > near)) {
    throw std::invalid_argument("sample_depths: need 0 < near < far");
  }
  if (s_count < 1) throw std::invalid_argument("sample_depths: S must be >= 1");
  std::vector<double> depths(s_count);
  const double step = (far - near) / s_count;
  for (int s = 0; s < s_count; ++s) depths[s] = near + (s + 0.5) * step;
  return depths;
}

std::vector<ReprojectedSample> reproject_samples(const Ray& ray, const std::vector<double>& depths,
                                                 const CameraIntrinsics& ref_intr,
                                                 const CameraPose& ref_pose) {
  std::vector<ReprojectedSample> out(depths.size());
  for (std::size_t s = 0; s < depths.size(); ++s) {
    const PixelProjection pp = project_point(ref_intr, ref_pose, ray.point_at(depths[s]));
    if (pp.valid && pp.u >= 0.0 && pp.u < ref_intr.width && pp.v >= 0.0 && pp.v < ref_intr.height) {
      out[s] = {pp.u, pp.v, true};
    }
  }
  return out;
}

BilinearTaps bilinear_taps(int height, int width, double u, double v) {
  // Sample position in pixel-center space.
  const double x = u - 0.5;
  const double y = v - 0.5;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const double wx = x - fx;
  const double wy = y - fy;

  const auto clampi = [](long i, int hi) {
    return static_cast<std::size_t>(std::clamp(i, 0l, static_cast<long>(hi) - 1));
  };
  const std::size_t x0 = clampi(static_cast<long>(fx), width);
  const std::size_t x1 = clampi(static_cast<long>(fx) + 1, width);
  const std::size_t y0 = clampi(static_cast<long>(fy), height);
  const std::size_t y1 = clampi(static_cast<long>(fy) + 1, height);

  BilinearTaps taps;
  taps.idx[0] = y0 * width + x0;
  taps.idx[1] = y0 * width + x1;
  taps.idx[2] = y1 * width + x0;
  taps.idx[3] = y1 * width + x1;
  taps.w[0] = (1.0 - wy) * (1.0 - wx);
  taps.w[1] = (1.0 - wy) * wx;
  taps.w[2] = wy * (1.0 - wx);
  taps.w[3] = wy * wx;
  return taps;
}

void bilinear_sample(const Tensor& map, double u, double v, double* out) {
  if (map.rank() != 3) {
    throw std::invalid_argument("bilinear_sample: map must be [H,W,C], got " +
                                shape_to_string(map.shape()));
  }
  const int h = static_cast<int>(map.dim(0));
  const int w = static_cast<int>(map.dim(1));
  const std::size_t c = map.dim(2);
  if (!(u >= 0.0 && u < w && v >= 0.0 && v < h)) {
    throw std::out_of_range("bilinear_sample: (" + std::to_string(u) + "," + std::to_string(v) +
                            ") outside [0," + std::to_string(w) + ")x[0," + std::to_string(h) +
                            ")");
  }
  const BilinearTaps taps = bilinear_taps(h, w, u, v);
  const double* base = map.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    out[ch] = taps.w[0] * base[taps.idx[0] * c + ch] + taps.w[1] * base[taps.idx[1] * c + ch] +
              taps.w[2] * base[taps.idx[2] * c + ch] + taps.w[3] * base[taps.idx[3] * c + ch];
  }
}

Tensor bilinear_sample(const Tensor& map, double u, double v) {
  Tensor out({map.dim(2)});
  bilinear_sample(map, u, v, out.data());
  return out;
}

void default_near_far(const ViewLayout& layout, int view_index, double* near, double* far) {
  const double dist = layout.poses.at(view_index).center().norm();
  *near = dist - 1.0;
  *far = dist + 1.0;
}

SampleGeometry build_sample_geometry(int target_index, const ViewLayout& layout, int feat_h,
                                     int feat_w, int k_views, int s_samples, double near,
                                     double far) {
  SampleGeometry geo;
  geo.view_indices = select_nearest_views(layout, target_index, k_views);
  geo.target_index = target_index;
  geo.feat_h = static_cast<std::size_t>(feat_h);
  geo.feat_w = static_cast<std::size_t>(feat_w);
  geo.pixels = geo.feat_h * geo.feat_w;
  geo.s_samples = static_cast<std::size_t>(s_samples);
  geo.near = near;
  geo.far = far;

  const std::size_t kk = geo.k_views();
  geo.valid = Tensor({kk, geo.pixels, geo.s_samples});
  geo.uv = Tensor({kk, geo.pixels, geo.s_samples, 2});
  geo.depths = Tensor({geo.pixels, geo.s_samples});
  geo.taps.resize(kk * geo.pixels * geo.s_samples);

  geo.target_rays = rays_from_feature_map(layout.intrinsics[target_index],
                                          layout.poses[target_index], feat_h, feat_w);
  const std::vector<double> depths = sample_depths(near, far, s_samples);
  for (std::size_t p = 0; p < geo.pixels; ++p) {
    for (std::size_t s = 0; s < geo.s_samples; ++s) geo.depths[p * geo.s_samples + s] = depths[s];
  }

  for (std::size_t k = 0; k < kk; ++k) {
    const int view = geo.view_indices[k];
    const CameraIntrinsics& intr = layout.intrinsics[view];
    const double su = static_cast<double>(feat_w) / intr.width;
    const double sv = static_cast<double>(feat_h) / intr.height;
    for (std::size_t p = 0; p < geo.pixels; ++p) {
      const std::vector<ReprojectedSample> samples =
          reproject_samples(geo.target_rays[p], depths, intr, layout.poses[view]);
      for (std::size_t s = 0; s < geo.s_samples; ++s) {
        if (!samples[s].valid) continue;
        const std::size_t base = (k * geo.pixels + p) * geo.s_samples + s;
        geo.valid[base] = 1.0;
        geo.uv[base * 2 + 0] = samples[s].u;
        geo.uv[base * 2 + 1] = samples[s].v;
        geo.taps[base] = bilinear_taps(feat_h, feat_w, samples[s].u * su, samples[s].v * sv);
      }
    }
  }
  return geo;
}

Tensor gather_volume(const SampleGeometry& geo, const std::vector<Tensor>& feature_maps) {
  for (const Tensor& fm : feature_maps) {
    if (!fm.same_shape(feature_maps.front())) {
      throw_shape_mismatch("gather_volume", fm.shape(), feature_maps.front().shape());
    }
    if (fm.rank() != 3 || fm.dim(0) != geo.feat_h || fm.dim(1) != geo.feat_w) {
      throw std::invalid_argument("gather_volume: map " + shape_to_string(fm.shape()) +
                                  " does not match geometry grid " + std::to_string(geo.feat_h) +
                                  "x" + std::to_string(geo.feat_w));
    }
  }
  const std::size_t kk = geo.k_views();
  const std::size_t ch = feature_maps.front().dim(2);
  Tensor features({kk, geo.pixels, geo.s_samples, ch});
  for (std::size_t k = 0; k < kk; ++k) {
    const double* map = feature_maps.at(geo.view_indices[k]).data();
    for (std::size_t ps = 0; ps < geo.pixels * geo.s_samples; ++ps) {
      const std::size_t base = k * geo.pixels * geo.s_samples + ps;
      if (geo.valid[base] == 0.0) continue;
      const BilinearTaps& t = geo.taps[base];
      double* out = features.data() + base * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        out[c] = t.w[0] * map[t.idx[0] * ch + c] + t.w[1] * map[t.idx[1] * ch + c] +
                 t.w[2] * map[t.idx[2] * ch + c] + t.w[3] * map[t.idx[3] * ch + c];
      }
    }
  }
  return features;
}

void scatter_volume_grad(const SampleGeometry& geo, const Tensor& grad_features,
                         std::vector<Tensor>& map_grads) {
  const std::size_t kk = geo.k_views();
  const std::size_t ch = grad_features.shape().back();
  for (std::size_t k = 0; k < kk; ++k) {
    double* gmap = map_grads.at(geo.view_indices[k]).data();
    for (std::size_t ps = 0; ps < geo.pixels * geo.s_samples; ++ps) {
      const std::size_t base = k * geo.pixels * geo.s_samples + ps;
      if (geo.valid[base] == 0.0) continue;
      const BilinearTaps& t = geo.taps[base];
      const double* g = grad_features.data() + base * ch;
      for (std::size_t c = 0; c < ch; ++c) {
        if (g[c] == 0.0) continue;
        gmap[t.idx[0] * ch + c] += t.w[0] * g[c];
        gmap[t.idx[1] * ch + c] += t.w[1] * g[c];
        gmap[t.idx[2] * ch + c] += t.w[2] * g[c];
        gmap[t.idx[3] * ch + c] += t.w[3] * g[c];
      }
    }
  }
}

EpipolarSampleMap build_sample_volume(int target_index, const ViewLayout& layout,
                                      const std::vector<Tensor>& feature_maps, int k_views,
                                      int s_samples, double near, double far) {
  if (feature_maps.size() != layout.size()) {
    throw std::invalid_argument("build_sample_volume: " + std::to_string(feature_maps.size()) +
                                " feature maps for " + std::to_string(layout.size()) + " views");
  }
  if (feature_maps.empty() || feature_maps.front().rank() != 3) {
    throw std::invalid_argument("build_sample_volume: maps must be [H,W,C]");
  }
  const SampleGeometry geo = build_sample_geometry(
      target_index, layout, static_cast<int>(feature_maps.front().dim(0)),
      static_cast<int>(feature_maps.front().dim(1)), k_views, s_samples, near, far);

  EpipolarSampleMap vol;
  vol.features = gather_volume(geo, feature_maps);
  vol.valid = geo.valid;
  vol.depths = geo.depths;
  vol.uv = geo.uv;
  vol.view_indices = geo.view_indices;
  vol.target_index = target_index;
  vol.near = near;
  vol.far = far;
  return vol;
}

}  // namespace epiray
