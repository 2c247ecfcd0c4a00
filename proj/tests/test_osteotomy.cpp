#include "fragreg/osteotomy.hpp"

#include <doctest.h>

#include <random>

using namespace fragreg;

namespace {

// Cube of pelvis labels with 1 mm voxels.
LabelMap cube_pelvis(int n, const Vec3& origin) {
  LabelMap m;
  m.dims = {n, n, n};
  m.spacing = Vec3::Ones();
  m.origin = origin;
  m.voxels.assign(std::size_t(n) * n * n,
                  static_cast<std::uint8_t>(Label::pelvis));
  return m;
}

// A plane quadruple whose intersection keeps x <= cut_x: one real plane and
// three far-away planes that never touch the cube.
CutPlaneSet half_space_cuts(double cut_x) {
  CutPlaneSet cuts;
  cuts[CutName::ilium] = {Vec3(1, 0, 0), Vec3(cut_x, 0, 0)};
  cuts[CutName::pubis] = {Vec3(0, 1, 0), Vec3(0, 1000, 0)};
  cuts[CutName::ischium] = {Vec3(0, -1, 0), Vec3(0, -1000, 0)};
  cuts[CutName::posterior] = {Vec3(0, 0, 1), Vec3(0, 0, 1000)};
  return cuts;
}

// Brute-force voxel classification straight from the definitions.
Label classify(const Vec3& p, const CutPlaneSet& cuts) {
  bool inside = true;
  bool near = false;
  for (const auto& plane : cuts.planes) {
    const double d = plane.signed_distance(p);
    if (d > 0) inside = false;
    if (d <= 0 && -d <= 0.5) near = true;
  }
  if (!inside) return Label::pelvis;
  return near ? Label::cut : Label::fragment;
}

}  // namespace

TEST_CASE("chisel on a cube matches brute-force classification") {
  const int n = 24;
  LabelMap pelvis = cube_pelvis(n, Vec3::Zero());
  const CutPlaneSet cuts = half_space_cuts(10.2);

  const LabelMap out = chisel_fragment_labels(pelvis, cuts);

  std::size_t frag = 0, cut = 0, rest = 0;
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const Label expect = classify(out.voxel_center(i, j, k), cuts);
        CHECK(out.at(i, j, k) == static_cast<std::uint8_t>(expect));
        if (expect == Label::fragment) ++frag;
        else if (expect == Label::cut) ++cut;
        else ++rest;
      }
    }
  }
  // The half below x = 10.2 minus the 1 mm shell near the plane.
  CHECK(frag == std::size_t(10) * n * n);
  CHECK(cut == std::size_t(1) * n * n);
  CHECK(frag + cut + rest == out.size());
}

TEST_CASE("chisel output partitions the pelvis") {
  const int n = 20;
  LabelMap pelvis = cube_pelvis(n, Vec3(-3, 2, 7));
  // Carve a corner with oblique planes.
  CutPlaneSet cuts;
  cuts[CutName::ilium] = {Vec3(1, 1, 0).normalized(), Vec3(6, 5, 0)};
  cuts[CutName::pubis] = {Vec3(0, 1, 1).normalized(), Vec3(0, 8, 12)};
  cuts[CutName::ischium] = {Vec3(1, 0, 1).normalized(), Vec3(4, 0, 14)};
  cuts[CutName::posterior] = {Vec3(0.5, 0.5, 0.7).normalized(), Vec3(5, 6, 13)};

  const LabelMap out = chisel_fragment_labels(pelvis, cuts);
  std::size_t pelvis_in = pelvis.count(Label::pelvis);
  std::size_t sum = out.count(Label::pelvis) + out.count(Label::fragment) +
                    out.count(Label::cut);
  CHECK(sum == pelvis_in);
  CHECK(out.count(Label::fragment) > 0);
}

TEST_CASE("chisel keeps only the largest connected island") {
  // Two pelvis blocks separated by background; the cutting planes admit
  // both, but only the larger island may become fragment.
  LabelMap m;
  m.dims = {30, 10, 10};
  m.spacing = Vec3::Ones();
  m.origin = Vec3::Zero();
  m.voxels.assign(3000, 0);
  // Large block: x in [0, 11]; small block: x in [20, 25].
  for (int k = 0; k < 10; ++k)
    for (int j = 0; j < 10; ++j) {
      for (int i = 0; i <= 11; ++i) m.set(i, j, k, Label::pelvis);
      for (int i = 20; i <= 25; ++i) m.set(i, j, k, Label::pelvis);
    }

  CutPlaneSet cuts = half_space_cuts(1000);  // everything inside
  const LabelMap out = chisel_fragment_labels(m, cuts);

  // The small island reverts to pelvis.
  for (int k = 0; k < 10; ++k)
    for (int j = 0; j < 10; ++j)
      for (int i = 20; i <= 25; ++i) {
        CHECK(out.is(i, j, k, Label::pelvis));
      }
  // The big island is pure fragment (no plane is nearby).
  CHECK(out.count(Label::fragment) == std::size_t(12) * 100);
}

TEST_CASE("chisel with planes outside the bone reports no fragment") {
  LabelMap pelvis = cube_pelvis(8, Vec3::Zero());
  CutPlaneSet cuts;
  // All planes keep only x <= -50: empty.
  cuts[CutName::ilium] = {Vec3(1, 0, 0), Vec3(-50, 0, 0)};
  cuts[CutName::pubis] = {Vec3(0, 1, 0), Vec3(0, 1000, 0)};
  cuts[CutName::ischium] = {Vec3(0, -1, 0), Vec3(0, -1000, 0)};
  cuts[CutName::posterior] = {Vec3(0, 0, 1), Vec3(0, 0, 1000)};
  CHECK_THROWS(chisel_fragment_labels(pelvis, cuts));
}

TEST_CASE("chisel rejects an empty pelvis label") {
  LabelMap empty;
  empty.dims = {4, 4, 4};
  empty.spacing = Vec3::Ones();
  empty.origin = Vec3::Zero();
  empty.voxels.assign(64, 0);
  CHECK_THROWS(chisel_fragment_labels(empty, half_space_cuts(2)));
}

TEST_CASE("cut annotations recover slab surface points") {
  // 1-voxel-thick slab of bone at z = 10 (volume frame).
  Volume mask = Volume::make(40, 40, 21, Vec3::Ones(), Vec3(-20, -20, 0), 0.f);
  for (int j = 0; j < 40; ++j)
    for (int i = 0; i < 40; ++i) mask.at(i, j, 10) = 1.f;

  CameraGeometry cam;
  cam.cols = 64;
  cam.rows = 64;
  cam.pixel_spacing = 2.0;
  cam.sdd = 1000;
  cam.principal = Vec2(31.5, 31.5);
  // Volume placed so the slab is at depth 810 along the principal ray.
  RigidPose pose;
  pose.t = Vec3(0, 0, 800);

  CutAnnotation2D ann;
  ann.view_id = 0;
  ann.cut = CutName::ilium;
  ann.pixels.push_back({31.5, 31.5, CutPixelKind::entry_and_exit});

  const auto pts = cut_annotations_to_3d(ann, cam, pose, mask);
  REQUIRE(pts.size() == 2);  // entry and exit of the slab
  for (const auto& p : pts) {
    CHECK(std::abs(p.z() - 10.0) < 0.5 + 1e-6);  // within half a voxel
    CHECK(std::abs(p.x()) < 0.5);
    CHECK(std::abs(p.y()) < 0.5);
  }
  // The two points straddle the slab.
  CHECK(std::abs(pts[0].z() - pts[1].z()) > 0.5);

  SUBCASE("entry-only keeps one point") {
    ann.pixels[0].kind = CutPixelKind::entry;
    const auto one = cut_annotations_to_3d(ann, cam, pose, mask);
    CHECK(one.size() == 1);
  }

  SUBCASE("rays missing the bone contribute nothing") {
    ann.pixels[0] = {1.0, 1.0, CutPixelKind::entry_and_exit};
    const auto none = cut_annotations_to_3d(ann, cam, pose, mask);
    CHECK(none.empty());
  }
}

TEST_CASE("convex body yields exactly two crossings per pixel") {
  // Solid ball mask.
  Volume mask = Volume::make(30, 30, 30, Vec3::Ones(), Vec3(-15, -15, -15), 0.f);
  for (int k = 0; k < 30; ++k)
    for (int j = 0; j < 30; ++j)
      for (int i = 0; i < 30; ++i) {
        if (mask.voxel_center(i, j, k).norm() <= 10) mask.at(i, j, k) = 1.f;
      }
  CameraGeometry cam;
  cam.cols = 32;
  cam.rows = 32;
  cam.pixel_spacing = 2.0;
  cam.sdd = 1000;
  cam.principal = Vec2(15.5, 15.5);
  RigidPose pose;
  pose.t = Vec3(0, 0, 780);

  CutAnnotation2D ann;
  ann.view_id = 0;
  ann.cut = CutName::pubis;
  ann.pixels.push_back({15.5, 15.5, CutPixelKind::entry_and_exit});
  ann.pixels.push_back({13.0, 16.0, CutPixelKind::entry_and_exit});
  const auto pts = cut_annotations_to_3d(ann, cam, pose, mask);
  CHECK(pts.size() == 4);  // two crossings per pixel
}

TEST_CASE("RANSAC plane fitting") {
  std::mt19937_64 rng(15);
  const Vec3 head(0, 0, 0);

  SUBCASE("noise and outliers") {
    std::normal_distribution<double> noise(0, 0.5);
    std::uniform_real_distribution<double> span(-40, 40), out_z(12, 90);
    int good = 0;
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<Vec3> pts;
      for (int i = 0; i < 50; ++i) {
        pts.emplace_back(span(rng), 30 + span(rng) * 0.5, 10 + noise(rng));
      }
      for (int i = 0; i < 20; ++i) {
        pts.emplace_back(span(rng), 30 + span(rng) * 0.5, out_z(rng));
      }
      RansacPlaneOptions opts;
      opts.seed = 100 + rep;
      // Superior points with z ~ 10: fit as an ilium cut (prune keeps
      // points superior of the head).
      const CutPlane plane =
          fit_cut_plane_ransac(pts, CutName::ilium, head, Side::left, opts);
      const double angle = rad2deg(
          std::acos(std::min(1.0, std::abs(plane.normal.dot(Vec3(0, 0, 1))))));
      const double offset = std::abs(plane.signed_distance(Vec3(0, 30, 10)));
      if (angle < 2.0 && offset < 1.0) ++good;
    }
    CHECK(good >= 19);
  }

  SUBCASE("exact coplanar input is recovered exactly") {
    std::vector<Vec3> pts;
    const Vec3 n = Vec3(0.3, 0.8, 0.5).normalized();
    const Vec3 p0(5, 40, 3);
    std::uniform_real_distribution<double> span(-30, 30);
    for (int i = 0; i < 30; ++i) {
      Vec3 d(span(rng), span(rng), span(rng));
      d -= d.dot(n) * n;
      pts.push_back(p0 + d);
    }
    const CutPlane plane =
        fit_cut_plane_ransac(pts, CutName::ilium, Vec3(0, -5, 0), Side::left, {});
    CHECK(std::abs(std::abs(plane.normal.dot(n)) - 1.0) < 1e-9);
    CHECK(std::abs(plane.signed_distance(p0)) < 1e-9);
  }

  SUBCASE("anatomy pruning removes inferior points for an ilium cut") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 30; ++i) {
      pts.emplace_back(i * 0.5, -20.0 - i * 0.1, 5.0);  // all inferior of head
    }
    CHECK_THROWS(fit_cut_plane_ransac(pts, CutName::ilium, head, Side::left, {}));
  }

  SUBCASE("anatomy pruning removes posterior points for a pubis cut") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 30; ++i) {
      pts.emplace_back(i * 0.5, 3.0, -10.0 - i * 0.1);  // all posterior
    }
    CHECK_THROWS(fit_cut_plane_ransac(pts, CutName::pubis, head, Side::left, {}));
  }

  SUBCASE("contralateral points are pruned") {
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) {
      pts.emplace_back(-150.0 - i, 20.0, 10.0);  // far medial for a left hip
    }
    CHECK_THROWS(fit_cut_plane_ransac(pts, CutName::ilium, head, Side::left, {}));
  }

  SUBCASE("deterministic given the seed") {
    std::vector<Vec3> pts;
    std::normal_distribution<double> noise(0, 0.4);
    std::uniform_real_distribution<double> span(-25, 25);
    for (int i = 0; i < 40; ++i) {
      pts.emplace_back(span(rng), 25 + span(rng) * 0.3, 4 + noise(rng));
    }
    RansacPlaneOptions opts;
    opts.seed = 9;
    const CutPlane a = fit_cut_plane_ransac(pts, CutName::ilium, head, Side::left, opts);
    const CutPlane b = fit_cut_plane_ransac(pts, CutName::ilium, head, Side::left, opts);
    CHECK(a.normal == b.normal);
    CHECK(a.point == b.point);
  }
}

TEST_CASE("fragment rebuild") {
  const int n = 24;
  LabelMap pelvis = cube_pelvis(n, Vec3::Zero());
  const CutPlaneSet planned = half_space_cuts(10.2);

  SUBCASE("estimates equal to the plan reproduce the planned labels") {
    const LabelMap base = chisel_fragment_labels(pelvis, planned);
    const LabelMap same = rebuild_fragment_shape(planned, planned[CutName::ilium],
                                                 planned[CutName::pubis], pelvis);
    CHECK(base.voxels == same.voxels);
  }

  SUBCASE("no estimates gives the pure preoperative plan") {
    const LabelMap base = chisel_fragment_labels(pelvis, planned);
    const LabelMap none =
        rebuild_fragment_shape(planned, std::nullopt, std::nullopt, pelvis);
    CHECK(base.voxels == none.voxels);
  }

  SUBCASE("a shifted ilium estimate matches brute-force reclassification") {
    CutPlane shifted = planned[CutName::ilium];
    shifted.point += Vec3(3, 0, 0);  // 3 mm along the plane normal
    const LabelMap out =
        rebuild_fragment_shape(planned, shifted, std::nullopt, pelvis);

    CutPlaneSet expect_cuts = planned;
    expect_cuts[CutName::ilium] = shifted;
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
          const Label expect = classify(out.voxel_center(i, j, k), expect_cuts);
          CHECK(out.at(i, j, k) == static_cast<std::uint8_t>(expect));
        }
  }

  SUBCASE("a flipped estimated normal is re-oriented before carving") {
    CutPlane flipped = planned[CutName::ilium];
    flipped.normal = -flipped.normal;
    const LabelMap base = chisel_fragment_labels(pelvis, planned);
    const LabelMap out =
        rebuild_fragment_shape(planned, flipped, std::nullopt, pelvis);
    CHECK(base.voxels == out.voxels);
  }
}
