#include "fragreg/projector.hpp"
#include "fragreg/similarity.hpp"

#include <doctest.h>

#include <random>

using namespace fragreg;

namespace {

// Homogeneous box volume: nx*ny*nz voxels of constant attenuation. The
// trilinear reconstruction extends half a voxel past the outer centers, so
// the analytic thickness along an axis is n * spacing.
Volume box_volume(int nx, int ny, int nz, float mu, const Vec3& origin) {
  return Volume::make(nx, ny, nz, Vec3::Ones(), origin, mu);
}

CameraGeometry small_cam(int size = 64, double spacing = 4.0) {
  CameraGeometry cam;
  cam.cols = size;
  cam.rows = size;
  cam.pixel_spacing = spacing;
  cam.sdd = 1020;
  cam.principal = Vec2((size - 1) / 2.0, (size - 1) / 2.0);
  return cam;
}

// Exact chord length of the segment src + t*dir through an axis-aligned
// box, independent of the ray marching code.
double box_chord(const Vec3& src, const Vec3& dir, const Vec3& lo, const Vec3& hi) {
  double t0 = 0, t1 = 1e30;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (src[a] < lo[a] || src[a] > hi[a]) return 0;
      continue;
    }
    double ta = (lo[a] - src[a]) / dir[a];
    double tb = (hi[a] - src[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return std::max(0.0, t1 - t0);
}

// Closed-form line integral of the trilinear reconstruction of a constant
// box: the reconstruction is a separable product of per-axis trapezoid
// profiles (1 on the voxel-center lattice, linear fade over one voxel),
// so the integrand is piecewise cubic in t. Integrated exactly with 3-point
// Gauss-Legendre between profile knots. Independent of the DRR code path.
double trilinear_box_integral(const Vec3& src, const Vec3& dir, double t_max,
                              float mu, const Volume& v) {
  auto profile = [&](int axis, double x) {
    // voxel coordinates: 1 inside [0, n-1], fades to 0 at -1 and n.
    const double n = v.dims[axis] - 1.0;
    if (x <= -1.0 || x >= n + 1.0) return 0.0;
    if (x < 0.0) return 1.0 + x;
    if (x > n) return n + 1.0 - x;
    return 1.0;
  };

  std::vector<double> knots{0.0, t_max};
  for (int a = 0; a < 3; ++a) {
    const double o = (src[a] - v.origin[a]) / v.spacing[a];
    const double d = dir[a] / v.spacing[a];
    if (std::abs(d) < 1e-15) continue;
    const double n = v.dims[a] - 1.0;
    for (double edge : {-1.0, 0.0, n, n + 1.0}) {
      const double t = (edge - o) / d;
      if (t > 0 && t < t_max) knots.push_back(t);
    }
  }
  std::sort(knots.begin(), knots.end());

  auto value = [&](double t) {
    const Vec3 p = src + t * dir;
    double prod = mu;
    for (int a = 0; a < 3; ++a) {
      prod *= profile(a, (p[a] - v.origin[a]) / v.spacing[a]);
    }
    return prod;
  };

  // 3-point Gauss-Legendre, exact for cubics.
  const double gx[3] = {-std::sqrt(3.0 / 5.0), 0.0, std::sqrt(3.0 / 5.0)};
  const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
  double integral = 0;
  for (std::size_t s = 0; s + 1 < knots.size(); ++s) {
    const double a = knots[s], b = knots[s + 1];
    if (b - a < 1e-12) continue;
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int g = 0; g < 3; ++g) {
      integral += gw[g] * half * value(mid + half * gx[g]);
    }
  }
  return integral;
}

}  // namespace

TEST_CASE("DRR of an all-zero volume is zero") {
  Volume v = box_volume(20, 20, 20, 0.f, Vec3(-10, -10, 790));
  const CameraGeometry cam = small_cam();
  const RadiographImage img = cast_drr({{&v, RigidPose::identity()}}, cam, 1);
  for (float p : img.px) CHECK(p == 0.f);
}

TEST_CASE("homogeneous box matches the analytic chord oracle") {
  const float mu = 0.02f;
  // 40 x 40 x 30 voxel box centered on the principal ray at depth 800.
  Volume v = box_volume(40, 40, 30, mu, Vec3(-19.5, -19.5, 785.5));
  const CameraGeometry cam = small_cam(96, 2.0);
  const RadiographImage img = cast_drr({{&v, RigidPose::identity()}}, cam, 1);

  const Vec3 src = cam.source_world();

  // Every tested pixel within two ray steps of the closed-form integral.
  double worst = 0;
  double worst_sharp = 0;  // against the sharp-box chord, central rays only
  const Vec3 lo = v.origin - 0.5 * Vec3::Ones();
  const Vec3 hi = v.origin + Vec3(v.dims[0] - 0.5, v.dims[1] - 0.5, v.dims[2] - 0.5);
  for (int vv = 0; vv < img.rows; vv += 3) {
    for (int uu = 0; uu < img.cols; uu += 3) {
      const Vec3 det = cam.detector_point_world(uu, vv);
      const double dist = (det - src).norm();
      const Vec3 dir = (det - src) / dist;
      const double expect = trilinear_box_integral(src, dir, dist, mu, v);
      worst = std::max(worst, std::abs(img.at(uu, vv) - expect));
      // Central pixels: the boundary fade is irrelevant and the plain
      // chord-length model applies directly.
      if (std::abs(uu - cam.principal.x()) < 12 &&
          std::abs(vv - cam.principal.y()) < 12) {
        const double chord = mu * box_chord(src, dir, lo, hi);
        worst_sharp = std::max(worst_sharp, std::abs(img.at(uu, vv) - chord));
      }
    }
  }
  CHECK(worst < 2.0 * kDrrStepMm * mu);
  CHECK(worst_sharp < 2.0 * kDrrStepMm * mu);
}

TEST_CASE("compositing two identical objects doubles the image") {
  Volume v = box_volume(25, 25, 25, 0.01f, Vec3(-12, -12, 788));
  const CameraGeometry cam = small_cam();
  const RadiographImage one = cast_drr({{&v, RigidPose::identity()}}, cam, 1);
  const RadiographImage two = cast_drr(
      {{&v, RigidPose::identity()}, {&v, RigidPose::identity()}}, cam, 1);
  for (std::size_t i = 0; i < one.px.size(); ++i) {
    CHECK(two.px[i] == doctest::Approx(2.0 * one.px[i]).epsilon(1e-5));
  }
}

TEST_CASE("DRR is linear in object attenuation") {
  Volume v = box_volume(25, 25, 25, 0.01f, Vec3(-12, -12, 788));
  Volume v3 = v;
  for (auto& x : v3.voxels) x *= 3.f;
  const CameraGeometry cam = small_cam();
  const RadiographImage a = cast_drr({{&v, RigidPose::identity()}}, cam, 1);
  const RadiographImage b = cast_drr({{&v3, RigidPose::identity()}}, cam, 1);
  for (std::size_t i = 0; i < a.px.size(); ++i) {
    CHECK(b.px[i] == doctest::Approx(3.0 * a.px[i]).epsilon(1e-5));
  }
}

TEST_CASE("posed object equals a baked-in transform") {
  // Moving the object by T and leaving the camera is the same as sampling
  // a volume whose contents were moved by T. A smooth blob keeps the
  // comparison free of resampling edge effects.
  Volume v = Volume::make(36, 36, 36, Vec3::Ones(), Vec3(-18, -18, 782));
  const Vec3 blob_center(0, 0, 800);
  for (int k = 0; k < v.dims[2]; ++k)
    for (int j = 0; j < v.dims[1]; ++j)
      for (int i = 0; i < v.dims[0]; ++i) {
        const double r = (v.voxel_center(i, j, k) - blob_center).norm();
        v.at(i, j, k) =
            r < 14 ? static_cast<float>(0.02 * (1 + std::cos(kPi * r / 14))) : 0.f;
      }

  RigidPose pose;
  pose.R = rot_z(deg2rad(7)) * rot_x(deg2rad(-4));
  pose.t = Vec3(6, -3, 10);

  const CameraGeometry cam = small_cam(48, 4.0);
  const RadiographImage moved = cast_drr({{&v, pose}}, cam, 1);

  // Oracle: a big identity-posed volume resampled from v through pose^-1.
  Volume big = Volume::make(180, 180, 160, Vec3::Ones(), Vec3(-90, -90, 720));
  const RigidPose inv = pose.inverse();
  for (int k = 0; k < big.dims[2]; ++k)
    for (int j = 0; j < big.dims[1]; ++j)
      for (int i = 0; i < big.dims[0]; ++i) {
        big.at(i, j, k) = trilinear_sample(v, inv.apply(big.voxel_center(i, j, k)));
      }
  const RadiographImage baked = cast_drr({{&big, RigidPose::identity()}}, cam, 1);
  double worst = 0;
  for (std::size_t i = 0; i < moved.px.size(); ++i) {
    worst = std::max(worst, std::abs(double(moved.px[i]) - baked.px[i]));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("downsampled rendering stays consistent across levels") {
  Volume v = box_volume(40, 40, 30, 0.01f, Vec3(-19.5, -19.5, 785.5));
  CameraGeometry cam;
  cam.cols = 256;
  cam.rows = 256;
  cam.pixel_spacing = 1.0;
  cam.sdd = 1020;
  cam.principal = Vec2(127.5, 127.5);

  const RadiographImage d8 = cast_drr({{&v, RigidPose::identity()}}, cam, 8);
  const RadiographImage d4 = cast_drr({{&v, RigidPose::identity()}}, cam, 4);
  // Block-average the 4x image down to the 8x grid and compare.
  double rms = 0;
  for (int vv = 0; vv < d8.rows; ++vv) {
    for (int uu = 0; uu < d8.cols; ++uu) {
      const double avg = 0.25 * (d4.at(2 * uu, 2 * vv) + d4.at(2 * uu + 1, 2 * vv) +
                                 d4.at(2 * uu, 2 * vv + 1) +
                                 d4.at(2 * uu + 1, 2 * vv + 1));
      const double diff = avg - d8.at(uu, vv);
      rms += diff * diff;
    }
  }
  rms = std::sqrt(rms / d8.size());
  CHECK(rms < 0.02);  // edge pixels differ; interior matches closely
}

TEST_CASE("poisson intensity statistics") {
  const CameraGeometry cam = small_cam(4, 4.0);

  SUBCASE("zero attenuation gives mean n0") {
    RadiographImage li = RadiographImage::make(ImageKind::line_integral, cam, 0.f);
    double sum = 0;
    const int n = 2000;
    for (int s = 0; s < n; ++s) {
      const RadiographImage img = poisson_intensity(li, 2000, s);
      for (float p : img.px) sum += p;
    }
    const double mean = sum / (n * li.size());
    CHECK(mean == doctest::Approx(2000).epsilon(0.01));
  }

  SUBCASE("line integral ln 2 halves the mean; variance tracks the mean") {
    RadiographImage li = RadiographImage::make(ImageKind::line_integral, cam,
                                               static_cast<float>(std::log(2.0)));
    // 10^4 seeds at one pixel.
    double sum = 0, sum2 = 0;
    const int n = 10000;
    for (int s = 0; s < n; ++s) {
      const RadiographImage img = poisson_intensity(li, 2000, s);
      sum += img.px[5];
      sum2 += double(img.px[5]) * img.px[5];
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(mean == doctest::Approx(1000).epsilon(0.01));
    CHECK(var == doctest::Approx(1000).epsilon(0.05));
  }

  SUBCASE("deterministic given the seed") {
    RadiographImage li = RadiographImage::make(ImageKind::line_integral, cam, 0.5f);
    const RadiographImage a = poisson_intensity(li, 2000, 42);
    const RadiographImage b = poisson_intensity(li, 2000, 42);
    CHECK(a.px == b.px);
    const RadiographImage c = poisson_intensity(li, 2000, 43);
    CHECK(a.px != c.px);
  }
}

TEST_CASE("log correction") {
  const CameraGeometry cam = small_cam(4, 4.0);
  RadiographImage img = RadiographImage::make(ImageKind::intensity, cam, 2000.f);
  img.px[1] = static_cast<float>(2000.0 * std::exp(-2.0));
  img.px[2] = 0.f;  // clamped to 1 before the log

  const RadiographImage lc = log_correct(img, 2000);
  CHECK(lc.kind == ImageKind::log_corrected);
  CHECK(lc.px[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(lc.px[1] == doctest::Approx(2.0).epsilon(1e-4));
  CHECK(lc.px[2] == doctest::Approx(std::log(2000.0)).epsilon(1e-6));
}

TEST_CASE("log correction inverts the fluoro simulation on average") {
  const float mu = 0.012f;
  Volume v = box_volume(40, 40, 40, mu, Vec3(-19.5, -19.5, 780.5));
  const CameraGeometry cam = small_cam(32, 4.0);
  const RadiographImage li = cast_drr({{&v, RigidPose::identity()}}, cam, 1);

  // Average the log-corrected noisy images over seeds.
  std::vector<double> acc(li.size(), 0.0);
  const int n = 200;
  for (int s = 0; s < n; ++s) {
    const RadiographImage lc = log_correct(poisson_intensity(li, 2000, s), 2000);
    for (std::size_t i = 0; i < lc.px.size(); ++i) acc[i] += lc.px[i];
  }
  double rms = 0;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double d = acc[i] / n - li.px[i];
    rms += d * d;
  }
  rms = std::sqrt(rms / acc.size());
  CHECK(rms < 0.1);
}

TEST_CASE("orbital view geometry") {
  CameraGeometry base = CameraGeometry::default_carm();
  base.extrinsic.R = rot_y(0.4) * rot_x(-0.1);
  base.extrinsic.t = Vec3(12, -8, 900);
  const Vec3 iso(3, 4, 820);
  const Vec3 axis = Vec3(0.2, 0.9, -0.1).normalized();

  SUBCASE("angle zero is the base geometry") {
    const CameraGeometry g = orbital_view_geometry(base, iso, axis, 0);
    CHECK((g.extrinsic.matrix() - base.extrinsic.matrix()).cwiseAbs().maxCoeff() <
          1e-12);
  }

  SUBCASE("+theta then -theta cancels") {
    const CameraGeometry g =
        orbital_view_geometry(orbital_view_geometry(base, iso, axis, 37.5), iso,
                              axis, -37.5);
    CHECK((g.extrinsic.matrix() - base.extrinsic.matrix()).cwiseAbs().maxCoeff() <
          1e-9);
  }

  SUBCASE("full turn returns to the base") {
    const CameraGeometry g = orbital_view_geometry(base, iso, axis, 360);
    CHECK((g.extrinsic.matrix() - base.extrinsic.matrix()).cwiseAbs().maxCoeff() <
          1e-6);
  }

  SUBCASE("isocenter projects to the same pixel at any angle") {
    const Vec2 p0 = base.project_world(iso);
    const Vec2 p1 = orbital_view_geometry(base, iso, axis, 25).project_world(iso);
    CHECK((p0 - p1).norm() < 1e-6);
  }
}
