// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/pnp.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <stdexcept>

namespace fragreg {

namespace {

Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1 : 1;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

}  // namespace

RigidPose posit_estimate(const std::vector<Vec3>& p3, const std::vector<Vec2>& p2,
                         const CameraGeometry& cam) {
  const int n = static_cast<int>(p3.size());
  if (n < 4 || p2.size() != p3.size()) {
    throw std::invalid_argument("posit: need >= 4 2D/3D landmark pairs");
  }
  const double f = cam.focal_pixels();

  // Image coordinates relative to the principal point, in pixels.
  std::vector<Vec2> img(n);
  for (int i = 0; i < n; ++i) img[i] = p2[i] - cam.principal;

  Eigen::MatrixXd a(n - 1, 3);
  for (int i = 1; i < n; ++i) a.row(i - 1) = (p3[i] - p3[0]).transpose();
  // Non-coplanarity check: the object matrix must have rank 3.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.singularValues()(2) < 1e-9 * svd.singularValues()(0)) {
    throw std::runtime_error("posit: landmarks are coplanar/degenerate");
  }
  const Eigen::MatrixXd b = svd.solve(Eigen::MatrixXd::Identity(n - 1, n - 1));
  // b is A^+ expressed as solve against I; columns correspond to points.

  Eigen::VectorXd eps = Eigen::VectorXd::Zero(n - 1);
  Mat3 rot = Mat3::Identity();
  Vec3 trans = Vec3::Zero();

  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd xs(n - 1), ys(n - 1);
    for (int i = 1; i < n; ++i) {
      xs[i - 1] = img[i].x() * (1.0 + eps[i - 1]) - img[0].x();
      ys[i - 1] = img[i].y() * (1.0 + eps[i - 1]) - img[0].y();
    }
    const Vec3 big_i = b * xs;
    const Vec3 big_j = b * ys;
    const double s1 = big_i.norm(), s2 = big_j.norm();
    if (s1 < 1e-15 || s2 < 1e-15) {
      throw std::runtime_error("posit: degenerate projection");
    }
    const double s = std::sqrt(s1 * s2);

    Mat3 r;
    r.row(0) = (big_i / s1).transpose();
    r.row(1) = (big_j / s2).transpose();
    r.row(2) = r.row(0).cross(r.row(1));
    rot = nearest_rotation(r);

    const double z0 = f / s;
    trans = Vec3(img[0].x() * z0 / f, img[0].y() * z0 / f, z0);

    Eigen::VectorXd eps_new(n - 1);
    for (int i = 1; i < n; ++i) {
      eps_new[i - 1] = rot.row(2).dot(p3[i] - p3[0]) / z0;
    }
    const double change = (eps_new - eps).cwiseAbs().maxCoeff();
    eps = eps_new;
    if (!eps.allFinite()) throw std::runtime_error("posit: diverged");
    if (change < 1e-10) break;
  }

  // POSIT translation locates p3[0]; shift to the volume origin.
  RigidPose pose;
  pose.R = rot;
  pose.t = trans - rot * p3[0];
  return pose;
}

double reprojection_rms(const std::vector<Vec3>& p3, const std::vector<Vec2>& p2,
                        const CameraGeometry& cam, const RigidPose& pose) {
  double ss = 0;
  for (std::size_t i = 0; i < p3.size(); ++i) {
    ss += (p2[i] - cam.project_world(pose.apply(p3[i]))).squaredNorm();
  }
  return std::sqrt(ss / std::max<std::size_t>(1, p3.size()));
}

RigidPose refine_reprojection(const std::vector<Vec3>& p3,
                              const std::vector<Vec2>& p2,
                              const CameraGeometry& cam, const RigidPose& init) {
  const int n = static_cast<int>(p3.size());
  RigidPose pose = init;

  auto residuals = [&](const RigidPose& p, Eigen::VectorXd& r) {
    for (int i = 0; i < n; ++i) {
      const Vec2 d = p2[i] - cam.project_world(p.apply(p3[i]));
      r[2 * i] = d.x();
      r[2 * i + 1] = d.y();
    }
  };

  Eigen::VectorXd r(2 * n), r_try(2 * n);
  residuals(pose, r);
  double cost = 0.5 * r.squaredNorm();
  double lambda = 1e-3;

  for (int iter = 0; iter < 100; ++iter) {
    // Numerical Jacobian w.r.t. a twist about the current pose.
    Eigen::MatrixXd jac(2 * n, 6);
    const double h = 1e-6;
    for (int k = 0; k < 6; ++k) {
      Vec6 dv = Vec6::Zero();
      dv[k] = h;
      const RigidPose pp = se3_exp(Twist::from_vector(dv), pose);
      dv[k] = -h;
      const RigidPose pm = se3_exp(Twist::from_vector(dv), pose);
      Eigen::VectorXd rp(2 * n), rm(2 * n);
      residuals(pp, rp);
      residuals(pm, rm);
      jac.col(k) = (rp - rm) / (2 * h);
    }

    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;

    bool improved = false;
    for (int attempt = 0; attempt < 8; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal().array() += lambda * (jtj.diagonal().array().abs() + 1e-12);
      const Vec6 step = -damped.ldlt().solve(jtr);
      const RigidPose trial = se3_exp(Twist::from_vector(step), pose);
      residuals(trial, r_try);
      const double cost_try = 0.5 * r_try.squaredNorm();
      if (std::isfinite(cost_try) && cost_try < cost) {
        pose = trial;
        r = r_try;
        const double rel = (cost - cost_try) / std::max(cost, 1e-300);
        cost = cost_try;
        lambda = std::max(1e-12, lambda * 0.3);
        improved = true;
        if (rel < 1e-14 || step.norm() < 1e-12) iter = 100;
        break;
      }
      lambda *= 10;
    }
    if (!improved) break;
  }
  return pose;
}

RigidPose posit_then_refine(const LandmarkSet& lm, const CameraGeometry& cam) {
  const auto names = lm.paired_names();
  if (names.size() < 4) {
    throw std::invalid_argument("posit_then_refine: need >= 4 paired landmarks");
  }
  std::vector<Vec3> p3;
  std::vector<Vec2> p2;
  for (const auto& name : names) {
    p3.push_back(lm.p3(name));
    p2.push_back(lm.p2(name));
  }

  // POSIT yields the pose in the camera frame; refinement runs in world.
  const RigidPose cam_pose = posit_estimate(p3, p2, cam);
  const RigidPose world_pose = cam.extrinsic.inverse() * cam_pose;
  return refine_reprojection(p3, p2, cam, world_pose);
}

}  // namespace fragreg
