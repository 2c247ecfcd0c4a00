// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Landmark-based pose initialization: scaled-orthographic POSIT followed by
// nonlinear refinement of the landmark re-projection error.

#pragma once

#include "fragreg/camera.hpp"
#include "fragreg/geom.hpp"

namespace fragreg {

// Pose mapping landmark (volume) coordinates into the world frame of `cam`
// such that the camera projects each 3D landmark onto its 2D counterpart.
// Requires >= 4 non-coplanar paired landmarks. Throws on divergence or when
// fewer than 4 pairs exist.
RigidPose posit_then_refine(const LandmarkSet& lm, const CameraGeometry& cam);

// The POSIT estimate alone (volume -> camera frame).
RigidPose posit_estimate(const std::vector<Vec3>& p3, const std::vector<Vec2>& p2,
                         const CameraGeometry& cam);

// Gauss-Newton / Levenberg style minimization of the summed squared
// re-projection error, parametrized by a twist about the initial pose.
// Returns the refined volume -> world pose.
RigidPose refine_reprojection(const std::vector<Vec3>& p3,
                              const std::vector<Vec2>& p2,
                              const CameraGeometry& cam, const RigidPose& init);

// RMS re-projection error (pixels) of a volume -> world pose.
double reprojection_rms(const std::vector<Vec3>& p3, const std::vector<Vec2>& p2,
                        const CameraGeometry& cam, const RigidPose& pose);

}  // namespace fragreg
