// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Rigid-body math: SE(3)/se(3) maps, anterior-pelvic-plane (APP) frame
// construction, paired-point registration, and anatomical pose-error
// decomposition.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fragreg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

enum class Side { left, right };

inline double side_sign(Side s) { return s == Side::left ? 1.0 : -1.0; }
inline const char* side_name(Side s) { return s == Side::left ? "left" : "right"; }
Side side_from_name(const std::string& name);

constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

// Rigid transform p -> R*p + t. Rotation kept orthonormal with det +1;
// translations in mm.
struct RigidPose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidPose identity() { return {}; }
  static RigidPose from_matrix(const Mat4& m);

  Mat4 matrix() const;
  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Vec3 rotate(const Vec3& v) const { return R * v; }
  RigidPose inverse() const;
  RigidPose operator*(const RigidPose& rhs) const;

  // Max-norm deviation of R from orthonormality / det(R) from +1.
  double orthonormality_error() const;
  bool is_valid(double tol = 1e-9) const;
};

// se(3) element split into a rotation part (axis-angle, radians) and a
// translation part (mm).
struct Twist {
  Vec3 rot = Vec3::Zero();
  Vec3 trans = Vec3::Zero();

  Vec6 vector() const {
    Vec6 v;
    v << rot, trans;
    return v;
  }
  static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
};

Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& w);
// Throws for rotations within 1e-6 of pi.
Vec3 so3_log(const Mat3& R);

// reference * exp(t). The closed-form V matrix couples the rotation and
// translation parts; a series expansion is used below 1e-8 rad.
RigidPose se3_exp(const Twist& t, const RigidPose& reference = RigidPose::identity());

// Inverse of se3_exp: the twist x with reference * exp(x) = p.
// Throws if the relative rotation angle is within 1e-6 of pi.
Twist se3_log(const RigidPose& p, const RigidPose& reference = RigidPose::identity());

Mat3 rot_x(double rad);
Mat3 rot_y(double rad);
Mat3 rot_z(double rad);
Mat3 rot_axis_angle(const Vec3& unit_axis, double rad);

// Extrinsic X->Y->Z Euler angles: R = Rz(c) * Ry(b) * Rx(a). Returns (a,b,c)
// in radians.
Vec3 euler_xyz_extrinsic(const Mat3& R);
Mat3 from_euler_xyz_extrinsic(const Vec3& abc);

// Named 3D landmarks (mm) with optional 2D image correspondences (pixels).
class LandmarkSet {
 public:
  void set3(const std::string& name, const Vec3& p) { p3_[name] = p; }
  void set2(const std::string& name, const Vec2& p) { p2_[name] = p; }

  bool has3(const std::string& name) const { return p3_.count(name) > 0; }
  bool has2(const std::string& name) const { return p2_.count(name) > 0; }

  // Throws if the landmark is missing.
  const Vec3& p3(const std::string& name) const;
  const Vec2& p2(const std::string& name) const;

  const std::map<std::string, Vec3>& all3() const { return p3_; }
  const std::map<std::string, Vec2>& all2() const { return p2_; }

  // Names present in both the 3D and 2D sets, sorted.
  std::vector<std::string> paired_names() const;

  LandmarkSet transformed(const RigidPose& g) const;

 private:
  std::map<std::string, Vec3> p3_;
  std::map<std::string, Vec2> p2_;
};

// CSV with header name,x,y,z (3D, mm) or name,u,v (2D, pixels).
LandmarkSet load_landmarks_csv(const std::string& path);
void save_landmarks_csv_3d(const LandmarkSet& lm, const std::string& path);
void save_landmarks_csv_2d(const LandmarkSet& lm, const std::string& path);

// Anterior pelvic plane frame with origin relocated to the ipsilateral
// femoral head. pose maps APP coordinates into the volume frame; its
// rotation columns are the LR, IS, AP axes expressed in volume coordinates.
struct AppFrame {
  RigidPose pose;
  Vec3 femoral_head = Vec3::Zero();
  Side side = Side::left;

  static AppFrame identity(Side s = Side::left) {
    AppFrame f;
    f.side = s;
    return f;
  }

  Vec3 lr_axis() const { return pose.R.col(0); }
  Vec3 is_axis() const { return pose.R.col(1); }
  Vec3 ap_axis() const { return pose.R.col(2); }
};

// Landmark names used for APP construction.
inline constexpr const char* kAsisLeft = "asis-l";
inline constexpr const char* kAsisRight = "asis-r";
inline constexpr const char* kPubicSymphysis = "pubic-symphysis";
inline const char* femoral_head_name(Side s) {
  return s == Side::left ? "femoral-head-l" : "femoral-head-r";
}

// LR axis along right-to-left ASIS; the plane through both ASIS points and
// the pubic symphysis fixes the AP normal; IS completes the right-handed
// frame; origin at the ipsilateral femoral head center.
// Throws on collinear/degenerate landmark configurations.
AppFrame build_app_frame(const LandmarkSet& landmarks, Side side);

// Least-squares rigid transform mapping src onto dst (SVD closed form).
// Requires >= 3 non-collinear correspondences.
RigidPose paired_point_register(const std::vector<Vec3>& src,
                                const std::vector<Vec3>& dst);

// Pose error of an estimate against ground truth, expressed in the APP
// frame. Per-axis rotations are the extrinsic LR->IS->AP Euler components.
struct PoseError {
  double rot_total_deg = 0;
  double trans_total_mm = 0;
  Vec3 rot_axis_deg = Vec3::Zero();   // |LR|, |IS|, |AP|
  Vec3 trans_axis_mm = Vec3::Zero();  // |LR|, |IS|, |AP|
};

PoseError pose_error_decompose(const RigidPose& est, const RigidPose& gt,
                               const AppFrame& frame);

}  // namespace fragreg
