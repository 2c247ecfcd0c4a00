// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/geom.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fragreg {

Side side_from_name(const std::string& name) {
  if (name == "left" || name == "l") return Side::left;
  if (name == "right" || name == "r") return Side::right;
  throw std::invalid_argument("unknown side: " + name);
}

RigidPose RigidPose::from_matrix(const Mat4& m) {
  RigidPose p;
  p.R = m.block<3, 3>(0, 0);
  p.t = m.block<3, 1>(0, 3);
  return p;
}

Mat4 RigidPose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.block<3, 3>(0, 0) = R;
  m.block<3, 1>(0, 3) = t;
  return m;
}

RigidPose RigidPose::inverse() const {
  RigidPose p;
  p.R = R.transpose();
  p.t = -(p.R * t);
  return p;
}

RigidPose RigidPose::operator*(const RigidPose& rhs) const {
  RigidPose p;
  p.R = R * rhs.R;
  p.t = R * rhs.t + t;
  return p;
}

double RigidPose::orthonormality_error() const {
  const double ortho = (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = std::abs(R.determinant() - 1.0);
  return std::max(ortho, det);
}

bool RigidPose::is_valid(double tol) const {
  return orthonormality_error() <= tol && t.allFinite();
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(),
      v.z(), 0, -v.x(),
      -v.y(), v.x(), 0;
  return s;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) {
    // 2nd order series; error O(theta^3).
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * W + c * W * W;
}

Vec3 so3_log(const Mat3& R) {
  // Quaternion route: well conditioned for all angles below pi, unlike the
  // trace/acos form which loses digits as the angle approaches pi.
  Eigen::Quaterniond q(R);
  double w = q.w();
  Vec3 v = q.vec();
  if (w < 0) {
    w = -w;
    v = -v;
  }
  const double vn = v.norm();
  const double theta = 2.0 * std::atan2(vn, w);
  if (theta >= kPi - 1e-6) {
    throw std::runtime_error("so3_log: rotation angle within 1e-6 of pi");
  }
  if (vn < 1e-12) return 2.0 * v;  // v = axis * sin(theta/2) ~ axis * theta/2
  return v * (theta / vn);
}

namespace {

// V matrix of the se(3) exponential: t_SE3 = V * t_se3.
Mat3 se3_v_matrix(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) {
    return Mat3::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Mat3 se3_v_inverse(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 W = skew(w);
  if (theta < 1e-8) {
    return Mat3::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double half = 0.5 * theta;
  const double c = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Mat3::Identity() - 0.5 * W + c * W * W;
}

}  // namespace

RigidPose se3_exp(const Twist& t, const RigidPose& reference) {
  RigidPose rel;
  rel.R = so3_exp(t.rot);
  rel.t = se3_v_matrix(t.rot) * t.trans;
  return reference * rel;
}

Twist se3_log(const RigidPose& p, const RigidPose& reference) {
  const RigidPose rel = reference.inverse() * p;
  Twist t;
  t.rot = so3_log(rel.R);
  t.trans = se3_v_inverse(t.rot) * rel.t;
  return t;
}

Mat3 rot_x(double rad) {
  Mat3 m;
  const double c = std::cos(rad), s = std::sin(rad);
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Mat3 rot_y(double rad) {
  Mat3 m;
  const double c = std::cos(rad), s = std::sin(rad);
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Mat3 rot_z(double rad) {
  Mat3 m;
  const double c = std::cos(rad), s = std::sin(rad);
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

Mat3 rot_axis_angle(const Vec3& unit_axis, double rad) {
  return so3_exp(unit_axis * rad);
}

Vec3 euler_xyz_extrinsic(const Mat3& R) {
  // R = Rz(c) * Ry(b) * Rx(a)
  const double sb = -R(2, 0);
  double a, b, c;
  if (std::abs(sb) < 1.0 - 1e-12) {
    b = std::asin(sb);
    a = std::atan2(R(2, 1), R(2, 2));
    c = std::atan2(R(1, 0), R(0, 0));
  } else {
    // Gimbal lock: fold the a/c ambiguity into a.
    b = sb > 0 ? kPi / 2 : -kPi / 2;
    a = std::atan2(-R(1, 2), R(1, 1));
    c = 0.0;
  }
  return {a, b, c};
}

Mat3 from_euler_xyz_extrinsic(const Vec3& abc) {
  return rot_z(abc.z()) * rot_y(abc.y()) * rot_x(abc.x());
}

const Vec3& LandmarkSet::p3(const std::string& name) const {
  auto it = p3_.find(name);
  if (it == p3_.end()) throw std::runtime_error("missing 3D landmark: " + name);
  return it->second;
}

const Vec2& LandmarkSet::p2(const std::string& name) const {
  auto it = p2_.find(name);
  if (it == p2_.end()) throw std::runtime_error("missing 2D landmark: " + name);
  return it->second;
}

std::vector<std::string> LandmarkSet::paired_names() const {
  std::vector<std::string> names;
  for (const auto& [name, p] : p3_) {
    if (p2_.count(name)) names.push_back(name);
  }
  return names;
}

LandmarkSet LandmarkSet::transformed(const RigidPose& g) const {
  LandmarkSet out = *this;
  for (auto& [name, p] : out.p3_) p = g.apply(p);
  return out;
}

LandmarkSet load_landmarks_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open landmark file: " + path);
  LandmarkSet lm;
  std::string line;
  bool is3 = true;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cols;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (!have_header) {
      if (cols.empty() || cols[0] != "name") {
        throw std::runtime_error("landmark CSV must start with a name,... header: " + path);
      }
      is3 = cols.size() >= 4;
      have_header = true;
      continue;
    }
    if (cols.size() < (is3 ? 4u : 3u)) {
      throw std::runtime_error("bad landmark row in " + path + ": " + line);
    }
    if (is3) {
      lm.set3(cols[0], Vec3(std::stod(cols[1]), std::stod(cols[2]), std::stod(cols[3])));
    } else {
      lm.set2(cols[0], Vec2(std::stod(cols[1]), std::stod(cols[2])));
    }
  }
  return lm;
}

void save_landmarks_csv_3d(const LandmarkSet& lm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write landmark file: " + path);
  out << "name,x,y,z\n";
  out.precision(17);
  for (const auto& [name, p] : lm.all3()) {
    out << name << ',' << p.x() << ',' << p.y() << ',' << p.z() << '\n';
  }
}

void save_landmarks_csv_2d(const LandmarkSet& lm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write landmark file: " + path);
  out << "name,u,v\n";
  out.precision(17);
  for (const auto& [name, p] : lm.all2()) {
    out << name << ',' << p.x() << ',' << p.y() << '\n';
  }
}

AppFrame build_app_frame(const LandmarkSet& landmarks, Side side) {
  const Vec3 asis_l = landmarks.p3(kAsisLeft);
  const Vec3 asis_r = landmarks.p3(kAsisRight);
  const Vec3 sym = landmarks.p3(kPubicSymphysis);
  const Vec3 head = landmarks.p3(femoral_head_name(side));

  const Vec3 lr_raw = asis_l - asis_r;
  const double lr_norm = lr_raw.norm();
  if (lr_norm < 1e-9) {
    throw std::runtime_error("build_app_frame: coincident ASIS landmarks");
  }
  const Vec3 lr = lr_raw / lr_norm;

  const Vec3 mid = 0.5 * (asis_l + asis_r);
  const Vec3 up_raw = mid - sym;  // symphysis sits inferior of the ASIS line
  const Vec3 ap_raw = lr.cross(up_raw);
  const double ap_norm = ap_raw.norm();
  if (ap_norm < 1e-6 * std::max(1.0, up_raw.norm())) {
    throw std::runtime_error("build_app_frame: ASIS and symphysis landmarks are collinear");
  }
  const Vec3 ap = ap_raw / ap_norm;
  const Vec3 is = ap.cross(lr);

  AppFrame frame;
  frame.pose.R.col(0) = lr;
  frame.pose.R.col(1) = is;
  frame.pose.R.col(2) = ap;
  frame.pose.t = head;
  frame.femoral_head = head;
  frame.side = side;
  return frame;
}

RigidPose paired_point_register(const std::vector<Vec3>& src,
                                const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) {
    throw std::invalid_argument("paired_point_register: size mismatch");
  }
  const std::size_t n = src.size();
  if (n < 3) {
    throw std::invalid_argument("paired_point_register: need >= 3 points");
  }

  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= double(n);
  cd /= double(n);

  Mat3 h = Mat3::Zero();
  double src_spread = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = src[i] - cs;
    const Vec3 b = dst[i] - cd;
    h += a * b.transpose();
    src_spread += a.squaredNorm();
  }

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Collinear sources leave the rotation about their axis unconstrained.
  if (sv(1) < 1e-9 * std::max(1.0, src_spread)) {
    throw std::runtime_error("paired_point_register: collinear points");
  }

  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  RigidPose pose;
  pose.R = svd.matrixV() * d * svd.matrixU().transpose();
  pose.t = cd - pose.R * cs;
  return pose;
}

PoseError pose_error_decompose(const RigidPose& est, const RigidPose& gt,
                               const AppFrame& frame) {
  const RigidPose diff = est * gt.inverse();
  const RigidPose in_app = frame.pose.inverse() * diff * frame.pose;

  PoseError e;
  const Eigen::AngleAxisd aa(in_app.R);
  e.rot_total_deg = rad2deg(std::abs(aa.angle()));
  e.trans_total_mm = in_app.t.norm();
  e.rot_axis_deg = euler_xyz_extrinsic(in_app.R).cwiseAbs() * (180.0 / kPi);
  e.trans_axis_mm = in_app.t.cwiseAbs();
  return e;
}

}  // namespace fragreg
