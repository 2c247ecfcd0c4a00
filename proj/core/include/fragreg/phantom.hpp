// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Procedural hemipelvis phantom: analytic solid primitives rasterized onto
// a 1 mm grid, with landmarks, an acetabular rim trace, and nominal
// osteotomy planes. The primitive list is retained so line integrals and
// surface points can be evaluated in closed form.

#pragma once

#include "fragreg/osteotomy.hpp"
#include "fragreg/volume.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fragreg {

struct PhantomPrimitive {
  enum class Kind { sphere, cylinder, box, ellipsoid };

  Kind kind = Kind::sphere;
  // sphere/ellipsoid: center + radii (sphere uses radii.x).
  // cylinder: end points a, b + radii.x.
  // box: center, orthonormal axes, half extents in radii.
  Vec3 center = Vec3::Zero();
  Vec3 a = Vec3::Zero(), b = Vec3::Zero();
  Mat3 axes = Mat3::Identity();
  Vec3 radii = Vec3::Ones();

  int priority = 0;  // higher wins where primitives overlap
  float hu = 0.f;
  Label label = Label::background;
  std::string part;

  bool contains(const Vec3& p) const;
  // In-interval [t0, t1] of the ray o + t*d (d unit); empty when t1 <= t0.
  bool ray_interval(const Vec3& o, const Vec3& d, double& t0, double& t1) const;
  void bounding_box(Vec3& lo, Vec3& hi) const;
};

struct PhantomModel {
  std::vector<PhantomPrimitive> primitives;  // sorted by descending priority
  float background_hu = -1000.f;

  Vec3 head_center = Vec3::Zero();
  Vec3 cup_opening_dir = Vec3::UnitX();
  double cup_outer_radius = 28.0;
  double cup_inner_radius = 22.0;
  double cup_opening_polar_deg = 75.0;

  float hu_at(const Vec3& p) const;
  Label label_at(const Vec3& p) const;

  // Closed-form attenuation line integral along o + t*d for t in
  // [0, t_max]: primitive in-intervals are stabbed and resolved by
  // priority, then each homogeneous segment contributes att * length.
  // Independent of the voxel raster and of any ray-marching code.
  double attenuation_line_integral(const Vec3& o, const Vec3& d,
                                   double t_max) const;
};

struct RimTrace {
  std::vector<Vec3> points;  // ordered, volume frame (mm)
};

struct Phantom {
  Volume hu;        // 1 mm isotropic, HU
  LabelMap labels;  // pelvis / femur-side / background
  LandmarkSet landmarks;
  RimTrace rim;
  CutPlaneSet nominal_cuts;
  PhantomModel model;
  Side side = Side::left;
};

// Deterministic given the seed; tissue HU values are drawn once per
// structure from the cortical (800-1200) and trabecular (150-300) bands.
Phantom generate_phantom(std::uint64_t seed, Side side = Side::left);

}  // namespace fragreg
