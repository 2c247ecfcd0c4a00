// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Pinhole C-arm geometry. The camera frame has its origin at the X-ray
// source, z toward the detector center, and x/y along the detector
// column/row directions; the detector plane sits at z = source-to-detector
// distance. extrinsic maps world coordinates into the camera frame.

#pragma once

#include "fragreg/geom.hpp"

namespace fragreg {

struct CameraGeometry {
  int cols = 1536;
  int rows = 1536;
  double pixel_spacing = 0.194;  // mm/pixel, isotropic
  double sdd = 1020.0;           // source-to-detector distance, mm
  Vec2 principal = Vec2(767.5, 767.5);
  RigidPose extrinsic;  // world -> camera

  // Naive C-arm intrinsics: 1536 x 1536, 0.194 mm/pixel, SDD 1020 mm,
  // principal point at the image center, no distortion.
  static CameraGeometry default_carm();

  void validate() const;

  double focal_pixels() const { return sdd / pixel_spacing; }

  Vec3 source_world() const { return extrinsic.inverse().t; }

  Vec3 detector_point_cam(double u, double v) const {
    return {(u - principal.x()) * pixel_spacing,
            (v - principal.y()) * pixel_spacing, sdd};
  }
  Vec3 detector_point_world(double u, double v) const {
    return extrinsic.inverse().apply(detector_point_cam(u, v));
  }

  // Pixel coordinates of a world point. Points at or behind the source
  // plane project to non-finite coordinates.
  Vec2 project_world(const Vec3& p) const {
    const Vec3 pc = extrinsic.apply(p);
    const double f = focal_pixels();
    return {principal.x() + f * pc.x() / pc.z(),
            principal.y() + f * pc.y() / pc.z()};
  }

  // Geometry of the same physical detector binned by an integer factor.
  // Coarse pixel i covers fine pixels [i*f, (i+1)*f); its center maps to
  // fine coordinate i*f + (f-1)/2, which fixes the principal point shift.
  CameraGeometry downsampled(int factor) const;
};

// Rotates the camera along the C-arm orbit: the camera assembly is rotated
// by `angle_deg` about `axis` (unit, world frame) through `isocenter`;
// intrinsics are unchanged.
CameraGeometry orbital_view_geometry(const CameraGeometry& base,
                                     const Vec3& isocenter, const Vec3& axis,
                                     double angle_deg);

}  // namespace fragreg
