// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Synthetic surgery generator: random osteotomy plans, random fragment and
// femur movements with collision rejection, piecewise-rigid soft-tissue
// warping, K-wire insertion, simulated fluoroscopy, and simulated
// annotations with landmark noise.

#pragma once

#include "fragreg/osteotomy.hpp"
#include "fragreg/phantom.hpp"
#include "fragreg/pipeline.hpp"
#include "fragreg/projector.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

namespace fragreg {

// Euler angles (deg) about the APP LR/IS/AP axes and a shared translation
// (mm) along them.
struct MovementSample {
  Vec3 fragment_rot_deg = Vec3::Zero();
  Vec3 femur_rot_deg = Vec3::Zero();
  Vec3 translation_mm = Vec3::Zero();

  RigidPose fragment_pose_app() const;
  RigidPose femur_pose_app() const;
};

// Movement expressed in the world (volume) frame via the APP frame.
RigidPose movement_world_pose(const RigidPose& pose_app, const AppFrame& app);

struct KWireSpec {
  Vec3 insertion = Vec3::Zero();   // p_i, on the iliac crest surface
  Vec3 target = Vec3::Zero();      // p_f, on the relocated fragment
  Vec3 direction = Vec3::UnitY();  // unit, insertion -> target
  double body_radius_mm = 1.0;     // U[0.5, 1.5]
  double body_length_mm = 228.0;   // U[190.5, 266.7]
  double tip_height_mm = 5.0;      // U[4, 6]
  double hu = 20000;               // U[14000, 26000]
};

// K-wire direction blend: n = (beta*n_fh + (1-beta)*n_if) normalized.
Vec3 kwire_direction(const Vec3& n_if, const Vec3& n_fh, double beta);

// Perturbs each plane by a random rigid transform (rotation <= 10 deg about
// the plane anchor, translation <= 5 mm) and auto-validates the result: the
// chisel must produce a fragment that still contains the acetabular cup.
// Invalid draws are rejected and resampled; throws after 100 consecutive
// rejections.
CutPlaneSet perturb_plan(const CutPlaneSet& nominal, const Phantom& phantom,
                         std::uint64_t seed);

// Table-driven movement sampling with per-side sign conventions and
// collision rejection on the 1 mm grid; throws after 1000 consecutive
// rejections. `labels` must contain the fragment carved for this trial.
MovementSample sample_movement(Side side, const LabelMap& labels,
                               const AppFrame& app, std::uint64_t seed);

// True when no moved fragment/femur voxel lands in another bone's voxel.
bool movement_collision_free(const MovementSample& move, const LabelMap& labels,
                             const AppFrame& app);

// Piecewise-rigid warp: fragment and femur voxels are resampled at their
// moved poses (overwriting destination intensities); vacated voxels (and
// the chiseled cut band) are filled with muscle noise N(alpha, 20) HU,
// alpha ~ U[35, 55] drawn once per call.
Volume build_warped_volume(const Volume& ct_hu, const LabelMap& labels,
                           const MovementSample& move, const AppFrame& app,
                           std::uint64_t seed);

// Labels transported to the moved configuration (fragment/femur move, cut
// becomes background).
LabelMap build_moved_labels(const LabelMap& labels, const MovementSample& move,
                            const AppFrame& app);

// Inserts two K-wires from the post-osteotomy iliac crest into the
// relocated fragment; the volume is modified in place with 4x supersampled
// rasterization. Returns the sampled wire specs.
std::vector<KWireSpec> insert_kwires(Volume& hu, const LabelMap& labels,
                                     const LabelMap& moved_labels,
                                     const MovementSample& move,
                                     const AppFrame& app, std::uint64_t seed);

struct ViewSampleResult {
  std::array<CameraGeometry, 3> views;
  OrbitGeometry orbit_in_view1;  // exact orbit, first-view camera coords
  std::array<double, 3> orbital_angles_deg{0, 0, 0};
};

// AP view with the APP axes aligned to the detector, the femoral head at
// 80% SDD projecting to the image center then shifted 25 mm along LR and
// 35 mm along IS, randomly perturbed; views 2-3 at orbital angles
// N(-10, 3) / N(15, 3) degrees with small perturbations.
ViewSampleResult sample_view_set(const AppFrame& app,
                                 const CameraGeometry& intrinsics,
                                 std::uint64_t seed);

struct SimulatedAnnotations {
  std::vector<CutAnnotation2D> annotations;  // ilium + pubis per view
  LandmarkSet noisy_landmarks;               // 3D noise applied
  // Noisy 2D projections of the landmarks per view.
  std::vector<LandmarkSet> noisy_landmarks_2d;
};

struct AnnotationNoiseOptions {
  double landmark_3d_sigma_mm = 3.0;
  double landmark_2d_sigma_px = 7.5;
  double warp_corner_sigma_px = 2.0;
  double erase_fraction = 0.25;  // fraction of each cut line erased in groups
  bool enable_noise = true;
};

// Projects the true cut-plane/pelvis-surface intersections into each view,
// erases random label groups along each cut, warps pixel positions by a
// smooth random field, and adds isotropic noise to 3D/2D landmarks.
// moved_labels (the intraoperative configuration) drive the entry/exit
// classification and occlusion checks.
SimulatedAnnotations simulate_annotations(
    const Phantom& phantom, const CutPlaneSet& true_cuts,
    const LabelMap& labels, const LabelMap& moved_labels,
    const std::array<CameraGeometry, 3>& views, std::uint64_t seed,
    const AnnotationNoiseOptions& opts = {});

struct TrialRecord {
  int trial_id = 0;
  std::uint64_t seed = 0;
  Side side = Side::left;
  CutPlaneSet nominal_cuts;  // preoperative plan
  CutPlaneSet true_cuts;     // actual (perturbed) osteotomies
  MovementSample movement;
  std::array<CameraGeometry, 3> view_geometry;
  OrbitGeometry orbit_in_view1;
  std::array<RadiographImage, 3> intensity_images;
  std::vector<KWireSpec> wires;
  SimulatedAnnotations annotations;
  LabelMap labels_true_fragment;  // phantom labels + chiseled true fragment
};

struct TrialOptions {
  std::int64_t photons = kPhotonCountDefault;
  AnnotationNoiseOptions annotation_noise;
};

// Full trial: plan perturbation, movement sampling, warping, K-wires,
// fluoroscopy, annotations. Deterministic given (phantom seed, trial seed).
TrialRecord simulate_trial(const Phantom& phantom, int trial_id,
                           std::uint64_t seed, const TrialOptions& opts = {});

}  // namespace fragreg
