// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Intraoperative registration strategy: single-landmark initialization,
// single-view pelvis registration, orbital geometry recovery, sequential +
// simultaneous multi-object multi-view registration, and reporting of the
// fragment's relative pose and LCE angle.

#pragma once

#include "fragreg/optim.hpp"
#include "fragreg/phantom.hpp"
#include "fragreg/projector.hpp"
#include "fragreg/similarity.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fragreg {

struct ViewData {
  RadiographImage image;  // log-corrected, full resolution
  CameraGeometry intrinsics;
};

struct ViewSet {
  std::vector<ViewData> views;
  bool first_view_is_ap = true;
};

// C-arm orbit expressed in the coordinates of the first view's camera;
// a device property recovered by offline calibration (exact in simulation).
struct OrbitGeometry {
  Vec3 isocenter_cam = Vec3::Zero();
  Vec3 axis_cam = Vec3::UnitY();
};

enum class SingleViewPhase { landmark_init, rotation_init };

struct PhaseParams {
  CmaesConfig cmaes;
  RegularizerConfig regularizer;
  Vec6 bobyqa_box;  // half widths (deg x3, mm x3)
};

struct MultiObjectParams {
  CmaesConfig cmaes;
  RegularizerConfig folded;
  Vec6 seq_box;
  Vec6 simult_box;
};

// All optimizer parameters, table-driven with the published defaults.
struct RegistrationConfig {
  int coarse_downsample = 8;
  int fine_downsample = 4;
  PatchSimilarityConfig patch;  // diameter 83 px at full resolution

  PhaseParams landmark_init;
  PhaseParams rotation_init;
  MultiObjectParams pelvis;
  MultiObjectParams femur;
  MultiObjectParams fragment;

  int orbital_half_range_deg = 90;  // +/- range searched in 1 degree steps
  double landmark_depth_fraction = 0.85;
  std::uint64_t seed = 0;

  static RegistrationConfig defaults();
};

struct RegistrationResult {
  // Camera (view 1) -> volume maps, paper-style transforms.
  RigidPose t_c_pv;
  RigidPose t_c_fv;
  RigidPose t_c_femur;
  RigidPose delta_app;
  // Pelvis volume -> camera m, per view (the recovered multi-view geometry).
  std::vector<RigidPose> view_extrinsics;
  std::map<std::string, double> phase_scores;
  std::map<std::string, double> phase_seconds;
};

// Pose initialization from one annotated landmark in an approximately AP
// view: the 3D landmark is placed on its pixel ray at
// landmark_depth_fraction * SDD from the source; orientation aligns the APP
// axes with the AP viewing convention (LR -> +x, IS -> +y, AP -> +z in
// camera axes); translation maps the 3D landmark onto the estimated point.
// Returns the volume -> camera pose.
RigidPose init_single_landmark(const Vec2& lm2d_px, const CameraGeometry& cam,
                               const AppFrame& app, const Vec3& lm3d_vol,
                               double depth_fraction = 0.85);

// CMA-ES at the coarse level with per-component normal regularization, then
// a box-constrained quadratic-model refinement at the fine level. The
// optimization twist is referenced in a camera-axis-aligned frame with
// origin at the femoral head estimate.
RigidPose register_single_view(const RadiographImage& image_full,
                               const CameraGeometry& intrinsics,
                               const Volume& object, const RigidPose& init,
                               SingleViewPhase phase,
                               const RegistrationConfig& cfg,
                               const Vec3& femoral_head_vol,
                               std::map<std::string, double>* scores = nullptr);

struct OrbitalSearchResult {
  double best_angle_deg = 0;
  RigidPose pose;          // refined pelvis volume -> camera pose
  RigidPose coarse_pose;   // best grid candidate before refinement
  int candidates = 0;
};

// Evaluates pelvis DRRs at orbital offsets (-range..+range in 1 degree
// steps) from the registered first view, scores them against this view's
// image, and refines the best candidate with the rotation-init phase.
OrbitalSearchResult orbital_exhaustive_init(
    const RadiographImage& image_full, const CameraGeometry& intrinsics,
    const RigidPose& registered_first, const OrbitGeometry& orbit,
    const Volume& pelvis, const RegistrationConfig& cfg,
    const Vec3& femoral_head_vol);

struct ObjectModels {
  Volume pelvis;
  Volume fragment;
  std::optional<Volume> femur;
};

// Sequential CMA-ES at the coarse level (pelvis, then femur, then fragment,
// the latter two initialized at the pelvis pose), sequential bounded
// refinement at the fine level, then a simultaneous refinement over all
// object poses. The optimization twist is referenced in the APP frame with
// origin at the ipsilateral femoral head. view_poses are the per-view
// pelvis volume -> camera maps recovered by the single-view stage.
RegistrationResult register_multiview_multiobject(
    const ViewSet& views, const std::vector<RigidPose>& view_poses,
    const ObjectModels& objects, const AppFrame& app,
    const RegistrationConfig& cfg);

// Relative fragment pose in the APP frame from camera -> volume transforms:
// delta = T_PV^APP * T_C^FV * T_PV^C * T_APP^PV.
RigidPose relative_pose_app(const RigidPose& t_c_fv, const RigidPose& t_c_pv,
                            const RigidPose& t_app_pv);

// Lateral center edge angle: rim points are mapped into the APP frame,
// moved by delta, projected onto the coronal (LR-IS) plane, and the angle
// between the superior axis and the ray from the femoral head center to the
// lateral-most transformed rim point is returned (degrees). Throws when
// every transformed rim point lies medial of the head center.
double compute_lce(const RimTrace& rim, const Vec3& head_center_vol,
                   const RigidPose& delta_app, const AppFrame& app, Side side);

}  // namespace fragreg
