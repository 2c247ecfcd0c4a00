// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Virtual-chisel fragment labeling from cutting planes and intraoperative
// fragment-shape estimation from 2D cut-line annotations.

#pragma once

#include "fragreg/camera.hpp"
#include "fragreg/volume.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fragreg {

// Oriented plane n . (x - p) = 0 with the unit normal pointing away from
// the fragment side.
struct CutPlane {
  Vec3 normal = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();

  double signed_distance(const Vec3& x) const { return normal.dot(x - point); }
};

enum class CutName { ilium, pubis, ischium, posterior };
const char* cut_name_str(CutName c);
CutName cut_name_from_str(const std::string& s);

// The four PAO osteotomy planes. A voxel belongs to the candidate fragment
// when it lies on the non-positive side of every plane.
struct CutPlaneSet {
  std::array<CutPlane, 4> planes;  // indexed by CutName

  CutPlane& operator[](CutName c) { return planes[static_cast<int>(c)]; }
  const CutPlane& operator[](CutName c) const {
    return planes[static_cast<int>(c)];
  }
  void validate() const;
};

inline constexpr double kChiselWidthMm = 1.0;

// Carves the planned fragment out of the pelvis label: pelvis voxels inside
// the region bounded by the four planes become fragment candidates; those
// within half a chisel width of any plane become cut; the candidate set is
// reduced to its largest 26-connected component (smaller islands revert to
// pelvis). Throws when no fragment voxels remain.
LabelMap chisel_fragment_labels(const LabelMap& pelvis_labels,
                                const CutPlaneSet& cuts);

enum class CutPixelKind : std::uint8_t { entry = 0, exit = 1, entry_and_exit = 2 };

struct CutPixel {
  double u = 0, v = 0;
  CutPixelKind kind = CutPixelKind::entry;
};

// 2D annotation of one osteotomy's cut line in one view.
struct CutAnnotation2D {
  int view_id = 0;
  CutName cut = CutName::ilium;
  std::vector<CutPixel> pixels;
};

// For each labeled pixel, marches the detector -> source ray through the
// bone occupancy mask (threshold 0.5) at the registered pose and collects
// surface crossing points with sub-voxel bisection; entry labels keep
// background->bone crossings, exit labels keep bone->background crossings.
// Pixels whose rays miss the mask contribute nothing. Points are returned
// in the mask's (preoperative volume) frame.
std::vector<Vec3> cut_annotations_to_3d(const CutAnnotation2D& ann,
                                        const CameraGeometry& cam,
                                        const RigidPose& pelvis_pose,
                                        const Volume& bone_mask);

struct RansacPlaneOptions {
  double inlier_threshold_mm = 2.0;
  int iterations = 500;
  std::uint64_t seed = 0;
};

// Anatomy pruning followed by a RANSAC plane fit with a least-squares refit
// on the inlier set. Points and the head center are expressed in APP axes
// (LR, IS, AP). Pruning keeps ipsilateral points (no more than
// kIpsilateralMarginMm medial of the femoral head), points superior of the
// head for ilium cuts, and points anterior of the head for pubis cuts.
// Throws when fewer than 3 points survive.
inline constexpr double kIpsilateralMarginMm = 40.0;

CutPlane fit_cut_plane_ransac(const std::vector<Vec3>& points_app, CutName cut,
                              const Vec3& head_center_app, Side side,
                              const RansacPlaneOptions& opts = {});

// Replaces the planned ilium/pubis planes by intraoperative estimates when
// provided and re-runs the virtual chisel. Estimated normals are flipped if
// needed to keep the fragment on the same side as the planned plane.
LabelMap rebuild_fragment_shape(const CutPlaneSet& planned,
                                const std::optional<CutPlane>& ilium_estimate,
                                const std::optional<CutPlane>& pubis_estimate,
                                const LabelMap& pelvis_labels);

CutPlane transform_plane(const CutPlane& plane, const RigidPose& g);

// Least-squares plane through a point set (centroid + smallest covariance
// eigenvector). Exposed for tests and the RANSAC refit.
CutPlane fit_plane_least_squares(const std::vector<Vec3>& points);

}  // namespace fragreg
