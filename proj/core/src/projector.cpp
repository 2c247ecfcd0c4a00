// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/projector.hpp"

#include "fragreg/parallel.hpp"
#include "fragreg/random.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fragreg {

CameraGeometry CameraGeometry::default_carm() {
  CameraGeometry cam;
  cam.cols = 1536;
  cam.rows = 1536;
  cam.pixel_spacing = 0.194;
  cam.sdd = 1020.0;
  cam.principal = Vec2((cam.cols - 1) / 2.0, (cam.rows - 1) / 2.0);
  return cam;
}

void CameraGeometry::validate() const {
  if (cols <= 0 || rows <= 0) throw std::invalid_argument("camera: empty image");
  if (pixel_spacing <= 0) throw std::invalid_argument("camera: pixel spacing <= 0");
  if (sdd <= 0) throw std::invalid_argument("camera: SDD <= 0");
  if (principal.x() < 0 || principal.x() > cols - 1 || principal.y() < 0 ||
      principal.y() > rows - 1) {
    throw std::invalid_argument("camera: principal point outside image");
  }
}

CameraGeometry CameraGeometry::downsampled(int factor) const {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return *this;
  CameraGeometry c = *this;
  c.cols = cols / factor;
  c.rows = rows / factor;
  c.pixel_spacing = pixel_spacing * factor;
  c.principal = (principal - Vec2::Constant((factor - 1) / 2.0)) / factor;
  return c;
}

CameraGeometry orbital_view_geometry(const CameraGeometry& base,
                                     const Vec3& isocenter, const Vec3& axis,
                                     double angle_deg) {
  RigidPose g;
  g.R = rot_axis_angle(axis.normalized(), deg2rad(angle_deg));
  g.t = isocenter - g.R * isocenter;
  CameraGeometry out = base;
  out.extrinsic = base.extrinsic * g.inverse();
  return out;
}

namespace {

// Per-object state with the ray geometry mapped into voxel-index space.
struct ObjectRay {
  const Volume* vol;
  Vec3 src_idx;     // source position, voxel coords
  Mat3 world_to_idx_rot;  // rotation part of world dir -> voxel-coord dir
};

// Trilinear fetch in voxel coordinates with zero outside; the caller
// guarantees p lies within the [-1, dims] padded box.
inline double sample_idx(const Volume& v, double x, double y, double z) {
  const int i0 = static_cast<int>(std::floor(x));
  const int j0 = static_cast<int>(std::floor(y));
  const int k0 = static_cast<int>(std::floor(z));
  const double fx = x - i0, fy = y - j0, fz = z - k0;

  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];
  if (i0 >= 0 && j0 >= 0 && k0 >= 0 && i0 + 1 < nx && j0 + 1 < ny && k0 + 1 < nz) {
    const float* p = v.voxels.data() + v.index(i0, j0, k0);
    const std::size_t sy = nx, sz = std::size_t(nx) * ny;
    const double c00 = p[0] * (1 - fx) + p[1] * fx;
    const double c10 = p[sy] * (1 - fx) + p[sy + 1] * fx;
    const double c01 = p[sz] * (1 - fx) + p[sz + 1] * fx;
    const double c11 = p[sz + sy] * (1 - fx) + p[sz + sy + 1] * fx;
    const double c0 = c00 * (1 - fy) + c10 * fy;
    const double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
  }

  auto fetch = [&](int i, int j, int k) -> double {
    return (i >= 0 && j >= 0 && k >= 0 && i < nx && j < ny && k < nz)
               ? v.at(i, j, k)
               : 0.0;
  };
  const double c00 = fetch(i0, j0, k0) * (1 - fx) + fetch(i0 + 1, j0, k0) * fx;
  const double c10 = fetch(i0, j0 + 1, k0) * (1 - fx) + fetch(i0 + 1, j0 + 1, k0) * fx;
  const double c01 = fetch(i0, j0, k0 + 1) * (1 - fx) + fetch(i0 + 1, j0, k0 + 1) * fx;
  const double c11 =
      fetch(i0, j0 + 1, k0 + 1) * (1 - fx) + fetch(i0 + 1, j0 + 1, k0 + 1) * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

// Integrates attenuation along the world-space ray src + t*dir (t in mm,
// dir unit) using midpoint segments of the 1 mm lattice anchored at the
// source, with partial first/last segments.
double integrate_ray(const ObjectRay& obj, const Vec3& dir_world,
                     double t_max_mm) {
  const Volume& v = *obj.vol;
  const Vec3 d_idx = obj.world_to_idx_rot * dir_world;

  // Clip to the padded support box [-1, dims] in voxel coordinates.
  double t0 = 0.0, t1 = t_max_mm;
  for (int a = 0; a < 3; ++a) {
    const double lo = -1.0, hi = double(v.dims[a]);
    const double o = obj.src_idx[a], d = d_idx[a];
    if (std::abs(d) < 1e-12) {
      if (o < lo || o > hi) return 0.0;
      continue;
    }
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t1 <= t0) return 0.0;

  const double h = kDrrStepMm;
  const std::int64_t k0 = static_cast<std::int64_t>(std::floor(t0 / h));
  const std::int64_t k1 = static_cast<std::int64_t>(std::ceil(t1 / h));

  double acc = 0.0;
  if (k1 - k0 == 1) {
    const double mid = 0.5 * (t0 + t1);
    const Vec3 p = obj.src_idx + mid * d_idx;
    return (t1 - t0) * sample_idx(v, p.x(), p.y(), p.z());
  }

  // First (possibly partial) segment.
  {
    const double s1 = (k0 + 1) * h;
    const double mid = 0.5 * (t0 + s1);
    const Vec3 p = obj.src_idx + mid * d_idx;
    acc += (s1 - t0) * sample_idx(v, p.x(), p.y(), p.z());
  }
  // Full interior segments, advanced incrementally.
  {
    Vec3 p = obj.src_idx + ((k0 + 1.5) * h) * d_idx;
    const Vec3 step = h * d_idx;
    double samples = 0.0;
    for (std::int64_t k = k0 + 1; k < k1 - 1; ++k) {
      samples += sample_idx(v, p.x(), p.y(), p.z());
      p += step;
    }
    acc += h * samples;
  }
  // Last (possibly partial) segment.
  {
    const double s0 = (k1 - 1) * h;
    const double mid = 0.5 * (s0 + t1);
    const Vec3 p = obj.src_idx + mid * d_idx;
    acc += (t1 - s0) * sample_idx(v, p.x(), p.y(), p.z());
  }
  return acc;
}

}  // namespace

RadiographImage cast_drr(const std::vector<PosedObject>& objects,
                         const CameraGeometry& cam, int downsample) {
  if (objects.empty()) throw std::invalid_argument("cast_drr: no objects");
  const CameraGeometry geom = cam.downsampled(downsample);
  RadiographImage img = RadiographImage::make(ImageKind::line_integral, geom);

  const RigidPose cam_to_world = geom.extrinsic.inverse();
  const Vec3 src_w = cam_to_world.t;
  // Detector raster in world coordinates.
  const Vec3 det00 = cam_to_world.apply(geom.detector_point_cam(0, 0));
  const Vec3 du = cam_to_world.rotate(Vec3(geom.pixel_spacing, 0, 0));
  const Vec3 dv = cam_to_world.rotate(Vec3(0, geom.pixel_spacing, 0));

  std::vector<ObjectRay> rays;
  rays.reserve(objects.size());
  for (const auto& o : objects) {
    if (!o.attenuation) throw std::invalid_argument("cast_drr: null volume");
    ObjectRay r;
    r.vol = o.attenuation;
    const RigidPose world_to_vol = o.pose.inverse();
    const Vec3 src_vol = world_to_vol.apply(src_w);
    r.src_idx = (src_vol - o.attenuation->origin)
                    .cwiseQuotient(o.attenuation->spacing);
    r.world_to_idx_rot =
        o.attenuation->spacing.cwiseInverse().asDiagonal() * world_to_vol.R;
    rays.push_back(r);
  }

  parallel_for(0, geom.rows, [&](std::int64_t v) {
    float* row = img.px.data() + v * geom.cols;
    const Vec3 row0 = det00 + double(v) * dv;
    for (const auto& obj : rays) {
      Vec3 det = row0;
      for (int u = 0; u < geom.cols; ++u, det += du) {
        const Vec3 delta = det - src_w;
        const double dist = delta.norm();
        const Vec3 dir = delta / dist;
        row[u] += static_cast<float>(integrate_ray(obj, dir, dist));
      }
    }
  });

  return img;
}

RadiographImage poisson_intensity(const RadiographImage& line_integral,
                                  std::int64_t n0, std::uint64_t seed) {
  if (line_integral.kind != ImageKind::line_integral) {
    throw std::invalid_argument("poisson_intensity: expected a line-integral image");
  }
  if (n0 <= 0) throw std::invalid_argument("poisson_intensity: n0 must be > 0");

  RadiographImage out = line_integral;
  out.kind = ImageKind::intensity;
  parallel_for(0, static_cast<std::int64_t>(out.size()), [&](std::int64_t i) {
    const double mean = double(n0) * std::exp(-double(line_integral.px[i]));
    if (mean <= 0.0) {
      out.px[i] = 0.f;
      return;
    }
    SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(i), 0x9d5f));
    std::poisson_distribution<std::int64_t> poisson(mean);
    out.px[i] = static_cast<float>(poisson(rng));
  }, 4096);
  return out;
}

RadiographImage simulate_fluoro(const Volume& att, const CameraGeometry& cam,
                                std::int64_t n0, std::uint64_t seed) {
  const RadiographImage li = cast_drr({{&att, RigidPose::identity()}}, cam, 1);
  return poisson_intensity(li, n0, seed);
}

RadiographImage log_correct(const RadiographImage& intensity, std::int64_t n0) {
  if (intensity.kind != ImageKind::intensity) {
    throw std::invalid_argument("log_correct: expected an intensity image");
  }
  RadiographImage out = intensity;
  out.kind = ImageKind::log_corrected;
  const double n0d = double(n0);
  for (auto& p : out.px) {
    p = static_cast<float>(-std::log(std::max(double(p), 1.0) / n0d));
  }
  return out;
}

}  // namespace fragreg
