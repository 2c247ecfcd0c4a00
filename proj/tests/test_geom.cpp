#include "fragreg/geom.hpp"
#include "fragreg/pnp.hpp"
#include "fragreg/projector.hpp"

#include <doctest.h>

#include <random>

using namespace fragreg;

namespace {

RigidPose random_pose(std::mt19937_64& rng, double rot_scale = 1.0,
                      double trans_scale = 50.0) {
  std::normal_distribution<double> n(0, 1);
  Twist t;
  t.rot = rot_scale * Vec3(n(rng), n(rng), n(rng));
  if (t.rot.norm() > kPi - 0.2) t.rot *= (kPi - 0.2) / t.rot.norm();
  t.trans = trans_scale * Vec3(n(rng), n(rng), n(rng));
  return se3_exp(t);
}

}  // namespace

TEST_CASE("se3 exp of zero twist is the identity") {
  const RigidPose p = se3_exp(Twist{});
  CHECK(p.R.isApprox(Mat3::Identity(), 1e-15));
  CHECK(p.t.norm() == doctest::Approx(0.0));
}

TEST_CASE("se3 exp of a quarter turn about x") {
  Twist t;
  t.rot = Vec3(kPi / 2, 0, 0);
  const RigidPose p = se3_exp(t);
  CHECK((p.R - rot_x(kPi / 2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(p.t.norm() < 1e-12);
}

TEST_CASE("se3 log of a pure translation") {
  RigidPose p;
  p.t = Vec3(1, 2, 3);
  const Twist t = se3_log(p);
  CHECK(t.rot.norm() < 1e-12);
  CHECK((t.trans - Vec3(1, 2, 3)).norm() < 1e-12);
}

TEST_CASE("se3 exp/log roundtrip over 1000 random twists") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    Twist t;
    t.rot = Vec3(n(rng), n(rng), n(rng));
    // keep the rotation angle clear of pi
    if (t.rot.norm() > kPi - 1e-3) t.rot *= (kPi - 1e-3) / t.rot.norm();
    t.trans = 100.0 * Vec3(n(rng), n(rng), n(rng));
    const Twist back = se3_log(se3_exp(t));
    worst = std::max(worst, (back.vector() - t.vector()).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("se3 exp/log respects a reference pose") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    const RigidPose ref = random_pose(rng);
    const RigidPose p = random_pose(rng);
    const Twist t = se3_log(p, ref);
    const RigidPose again = se3_exp(t, ref);
    CHECK((again.matrix() - p.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("se3 log throws near pi") {
  Twist t;
  t.rot = Vec3(kPi - 1e-9, 0, 0);
  const RigidPose p = se3_exp(t);
  CHECK_THROWS(se3_log(p));
}

TEST_CASE("small-angle branch stays accurate") {
  Twist t;
  t.rot = Vec3(1e-9, -2e-9, 5e-10);
  t.trans = Vec3(4, -7, 2);
  const Twist back = se3_log(se3_exp(t));
  CHECK((back.vector() - t.vector()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("APP frame from canonical landmarks") {
  LandmarkSet lm;
  lm.set3(kAsisLeft, Vec3(100, 0, 0));
  lm.set3(kAsisRight, Vec3(-100, 0, 0));
  lm.set3(kPubicSymphysis, Vec3(0, -80, 0));
  lm.set3(femoral_head_name(Side::left), Vec3(50, -40, 0));

  const AppFrame f = build_app_frame(lm, Side::left);
  CHECK((f.pose.t - Vec3(50, -40, 0)).norm() < 1e-12);
  // Axes align with canonical +/- x/y/z.
  for (int c = 0; c < 3; ++c) {
    const Vec3 axis = f.pose.R.col(c);
    CHECK(axis.cwiseAbs().maxCoeff() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(f.lr_axis().isApprox(Vec3(1, 0, 0), 1e-12));
  CHECK(f.is_axis().isApprox(Vec3(0, 1, 0), 1e-12));
  CHECK(f.ap_axis().isApprox(Vec3(0, 0, 1), 1e-12));
}

TEST_CASE("APP frame is equivariant under rigid transforms") {
  LandmarkSet lm;
  lm.set3(kAsisLeft, Vec3(96, 12, 7));
  lm.set3(kAsisRight, Vec3(-104, 3, -2));
  lm.set3(kPubicSymphysis, Vec3(-4, -78, 12));
  lm.set3(femoral_head_name(Side::right), Vec3(-55, -42, -8));

  std::mt19937_64 rng(3);
  const AppFrame base = build_app_frame(lm, Side::right);
  for (int i = 0; i < 50; ++i) {
    const RigidPose g = random_pose(rng);
    const AppFrame moved = build_app_frame(lm.transformed(g), Side::right);
    const RigidPose expect = g * base.pose;
    CHECK((moved.pose.matrix() - expect.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("APP frame rejects collinear landmarks") {
  LandmarkSet lm;
  lm.set3(kAsisLeft, Vec3(100, 0, 0));
  lm.set3(kAsisRight, Vec3(-100, 0, 0));
  lm.set3(kPubicSymphysis, Vec3(40, 0, 0));  // on the ASIS line
  lm.set3(femoral_head_name(Side::left), Vec3(50, -40, 0));
  CHECK_THROWS(build_app_frame(lm, Side::left));
}

TEST_CASE("paired-point registration recovers exact transforms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 40);
  std::vector<Vec3> src;
  for (int i = 0; i < 8; ++i) src.push_back(Vec3(n(rng), n(rng), n(rng)));

  SUBCASE("identity") {
    const RigidPose p = paired_point_register(src, src);
    CHECK((p.matrix() - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("known rigid transform, noiseless") {
    const RigidPose g = random_pose(rng);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(g.apply(p));
    const RigidPose est = paired_point_register(src, dst);
    CHECK((est.matrix() - g.matrix()).cwiseAbs().maxCoeff() < 1e-9);
    double resid = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      resid = std::max(resid, (est.apply(src[i]) - dst[i]).norm());
    }
    CHECK(resid < 1e-9);
  }

  SUBCASE("gaussian noise keeps RMS residual small") {
    // Monte-Carlo: sigma = 0.1 mm noise on 8 points, 100 draws. The
    // expected squared residual is sigma^2 * (3n - 6), so the mean RMS per
    // point sits near 0.15 mm; individual draws fluctuate (chi-squared).
    std::normal_distribution<double> noise(0, 0.1);
    double mean_rms = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const RigidPose g = random_pose(rng);
      std::vector<Vec3> dst;
      for (const auto& p : src) {
        dst.push_back(g.apply(p) + Vec3(noise(rng), noise(rng), noise(rng)));
      }
      const RigidPose est = paired_point_register(src, dst);
      double ss = 0;
      for (std::size_t i = 0; i < src.size(); ++i) {
        ss += (est.apply(src[i]) - dst[i]).squaredNorm();
      }
      const double rms = std::sqrt(ss / src.size());
      mean_rms += rms;
      CHECK(rms <= 0.35);
    }
    CHECK(mean_rms / 100 <= 0.2);
  }
}

TEST_CASE("paired-point registration rejects degenerate input") {
  std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK_THROWS(paired_point_register(two, two));

  std::vector<Vec3> line{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0),
                         Vec3(3, 0, 0)};
  CHECK_THROWS(paired_point_register(line, line));
}

TEST_CASE("POSIT with refinement recovers a synthetic pose") {
  CameraGeometry cam = CameraGeometry::default_carm();

  std::vector<Vec3> p3{Vec3(0, 0, 0),     Vec3(60, 10, -20), Vec3(-40, 55, 15),
                       Vec3(20, -70, 30), Vec3(-60, -25, -35), Vec3(35, 40, 45)};
  RigidPose gt;
  gt.R = rot_z(deg2rad(14)) * rot_y(deg2rad(-9)) * rot_x(deg2rad(22));
  gt.t = Vec3(12, -20, 780);

  LandmarkSet lm;
  for (std::size_t i = 0; i < p3.size(); ++i) {
    const std::string name = "lm" + std::to_string(i);
    lm.set3(name, p3[i]);
    lm.set2(name, cam.project_world(gt.apply(p3[i])));
  }

  const RigidPose est = posit_then_refine(lm, cam);
  const Twist err = se3_log(est, gt);
  CHECK(rad2deg(err.rot.norm()) < 0.1);
  CHECK((est.t - gt.t).norm() < 0.5);
}

TEST_CASE("POSIT refinement under 2D noise keeps reprojection bounded") {
  CameraGeometry cam = CameraGeometry::default_carm();
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0, 7.5);
  std::uniform_real_distribution<double> dir(0, 2 * kPi);

  std::vector<Vec3> p3{Vec3(0, 0, 0),      Vec3(60, 10, -20), Vec3(-40, 55, 15),
                       Vec3(20, -70, 30),  Vec3(-60, -25, -35), Vec3(35, 40, 45)};
  RigidPose gt;
  gt.R = rot_x(deg2rad(-10));
  gt.t = Vec3(0, 15, 820);

  int ok = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    std::vector<Vec2> p2;
    for (const auto& p : p3) {
      const double a = dir(rng);
      p2.push_back(cam.project_world(gt.apply(p)) +
                   noise(rng) * Vec2(std::cos(a), std::sin(a)));
    }
    const RigidPose init = posit_estimate(p3, p2, cam);
    const RigidPose est = refine_reprojection(p3, p2, cam, init);
    if (reprojection_rms(p3, p2, cam, est) <= 2 * 7.5) ++ok;
  }
  CHECK(ok == trials);
}

TEST_CASE("POSIT requires four landmark pairs") {
  CameraGeometry cam = CameraGeometry::default_carm();
  LandmarkSet lm;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "lm" + std::to_string(i);
    lm.set3(name, Vec3(10.0 * i, 5, 0));
    lm.set2(name, Vec2(700 + i, 700));
  }
  CHECK_THROWS(posit_then_refine(lm, cam));
}

TEST_CASE("pose error decomposition") {
  AppFrame app = AppFrame::identity();

  SUBCASE("zero error") {
    RigidPose g;
    g.R = rot_z(0.3);
    g.t = Vec3(4, 5, 6);
    const PoseError e = pose_error_decompose(g, g, app);
    CHECK(e.rot_total_deg == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(e.trans_total_mm == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("single-axis rotation shows up on the AP component") {
    RigidPose gt;
    gt.R = rot_x(deg2rad(12));
    gt.t = Vec3(1, 2, 3);
    RigidPose est;
    est.R = rot_z(deg2rad(5)) * gt.R;  // extra 5 degrees about AP
    est.t = gt.t;
    const PoseError e = pose_error_decompose(est, gt, app);
    CHECK(e.rot_total_deg == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(e.rot_axis_deg.z() == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(e.rot_axis_deg.x() < 1e-9);
    CHECK(e.rot_axis_deg.y() < 1e-9);
  }

  SUBCASE("total rotation bounds every per-axis component") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> n(0, 0.05);
    for (int i = 0; i < 1000; ++i) {
      RigidPose est;
      est.R = so3_exp(Vec3(n(rng), n(rng), n(rng)));
      est.t = Vec3(n(rng), n(rng), n(rng));
      const PoseError e = pose_error_decompose(est, RigidPose::identity(), app);
      CHECK(e.rot_total_deg >= e.rot_axis_deg.maxCoeff() - 1e-9);
    }
  }

  SUBCASE("total rotation is invariant to the reporting frame") {
    std::mt19937_64 rng(29);
    const RigidPose est = random_pose(rng, 0.1, 5.0);
    AppFrame other = AppFrame::identity();
    other.pose.R = rot_y(0.7) * rot_x(-0.2);
    const PoseError a = pose_error_decompose(est, RigidPose::identity(), app);
    const PoseError b = pose_error_decompose(est, RigidPose::identity(), other);
    CHECK(a.rot_total_deg == doctest::Approx(b.rot_total_deg).epsilon(1e-9));
  }
}

TEST_CASE("landmark CSV roundtrip") {
  LandmarkSet lm;
  lm.set3("asis-l", Vec3(1.25, -2.5, 3.75));
  lm.set3("mof", Vec3(-10, 20, -30));
  const std::string path = "landmarks_test.csv";
  save_landmarks_csv_3d(lm, path);
  const LandmarkSet back = load_landmarks_csv(path);
  CHECK((back.p3("asis-l") - lm.p3("asis-l")).norm() < 1e-12);
  CHECK((back.p3("mof") - lm.p3("mof")).norm() < 1e-12);
}
