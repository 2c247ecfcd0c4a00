// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/phantom.hpp"

#include "fragreg/parallel.hpp"
#include "fragreg/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace fragreg {

bool PhantomPrimitive::contains(const Vec3& p) const {
  switch (kind) {
    case Kind::sphere:
      return (p - center).squaredNorm() <= radii.x() * radii.x();
    case Kind::ellipsoid: {
      const Vec3 q = (p - center).cwiseQuotient(radii);
      return q.squaredNorm() <= 1.0;
    }
    case Kind::cylinder: {
      const Vec3 u = (b - a);
      const double len = u.norm();
      const Vec3 axis = u / len;
      const Vec3 rel = p - a;
      const double s = rel.dot(axis);
      if (s < 0 || s > len) return false;
      return (rel - s * axis).squaredNorm() <= radii.x() * radii.x();
    }
    case Kind::box: {
      const Vec3 q = axes.transpose() * (p - center);
      return std::abs(q.x()) <= radii.x() && std::abs(q.y()) <= radii.y() &&
             std::abs(q.z()) <= radii.z();
    }
  }
  return false;
}

namespace {

// Quadratic a t^2 + b t + c <= 0 solved as an interval.
bool quad_interval(double a, double b, double c, double& t0, double& t1) {
  if (std::abs(a) < 1e-15) {
    if (std::abs(b) < 1e-15) {
      if (c > 0) return false;
      t0 = -std::numeric_limits<double>::infinity();
      t1 = std::numeric_limits<double>::infinity();
      return true;
    }
    // Linear: bt + c <= 0.
    const double r = -c / b;
    if (b > 0) {
      t0 = -std::numeric_limits<double>::infinity();
      t1 = r;
    } else {
      t0 = r;
      t1 = std::numeric_limits<double>::infinity();
    }
    return true;
  }
  const double disc = b * b - 4 * a * c;
  if (disc <= 0) return a < 0;  // a<0 with no roots: always inside (not used)
  const double sq = std::sqrt(disc);
  t0 = (-b - sq) / (2 * a);
  t1 = (-b + sq) / (2 * a);
  if (t0 > t1) std::swap(t0, t1);
  return true;
}

bool slab_interval(double o, double d, double lo, double hi, double& t0,
                   double& t1) {
  if (std::abs(d) < 1e-15) {
    if (o < lo || o > hi) return false;
    t0 = -std::numeric_limits<double>::infinity();
    t1 = std::numeric_limits<double>::infinity();
    return true;
  }
  t0 = (lo - o) / d;
  t1 = (hi - o) / d;
  if (t0 > t1) std::swap(t0, t1);
  return true;
}

}  // namespace

bool PhantomPrimitive::ray_interval(const Vec3& o, const Vec3& d, double& t0,
                                    double& t1) const {
  switch (kind) {
    case Kind::sphere: {
      const Vec3 rel = o - center;
      return quad_interval(1.0, 2.0 * d.dot(rel),
                           rel.squaredNorm() - radii.x() * radii.x(), t0, t1) &&
             t1 > t0;
    }
    case Kind::ellipsoid: {
      const Vec3 dm = d.cwiseQuotient(radii);
      const Vec3 om = (o - center).cwiseQuotient(radii);
      return quad_interval(dm.squaredNorm(), 2.0 * dm.dot(om),
                           om.squaredNorm() - 1.0, t0, t1) &&
             t1 > t0;
    }
    case Kind::cylinder: {
      const Vec3 u = b - a;
      const double len = u.norm();
      const Vec3 axis = u / len;
      const Vec3 rel = o - a;

      const Vec3 dp = d - d.dot(axis) * axis;
      const Vec3 rp = rel - rel.dot(axis) * axis;
      double r0, r1;
      if (!quad_interval(dp.squaredNorm(), 2.0 * dp.dot(rp),
                         rp.squaredNorm() - radii.x() * radii.x(), r0, r1)) {
        return false;
      }
      double s0, s1;
      if (!slab_interval(rel.dot(axis), d.dot(axis), 0.0, len, s0, s1)) {
        return false;
      }
      t0 = std::max(r0, s0);
      t1 = std::min(r1, s1);
      return t1 > t0;
    }
    case Kind::box: {
      const Vec3 ol = axes.transpose() * (o - center);
      const Vec3 dl = axes.transpose() * d;
      t0 = -std::numeric_limits<double>::infinity();
      t1 = std::numeric_limits<double>::infinity();
      for (int i = 0; i < 3; ++i) {
        double s0, s1;
        if (!slab_interval(ol[i], dl[i], -radii[i], radii[i], s0, s1)) return false;
        t0 = std::max(t0, s0);
        t1 = std::min(t1, s1);
      }
      return t1 > t0;
    }
  }
  return false;
}

void PhantomPrimitive::bounding_box(Vec3& lo, Vec3& hi) const {
  switch (kind) {
    case Kind::sphere:
      lo = center - Vec3::Constant(radii.x());
      hi = center + Vec3::Constant(radii.x());
      return;
    case Kind::ellipsoid:
      lo = center - radii;
      hi = center + radii;
      return;
    case Kind::cylinder:
      lo = a.cwiseMin(b) - Vec3::Constant(radii.x());
      hi = a.cwiseMax(b) + Vec3::Constant(radii.x());
      return;
    case Kind::box: {
      const Vec3 ext = (axes.cwiseAbs() * radii);
      lo = center - ext;
      hi = center + ext;
      return;
    }
  }
}

float PhantomModel::hu_at(const Vec3& p) const {
  for (const auto& prim : primitives) {  // sorted by descending priority
    if (prim.contains(p)) return prim.hu;
  }
  return background_hu;
}

Label PhantomModel::label_at(const Vec3& p) const {
  for (const auto& prim : primitives) {
    if (prim.contains(p)) return prim.label;
  }
  return Label::background;
}

double PhantomModel::attenuation_line_integral(const Vec3& o, const Vec3& d,
                                               double t_max) const {
  struct Hit {
    double t0, t1;
    int priority;
    float hu;
  };
  std::vector<Hit> hits;
  std::vector<double> cuts{0.0, t_max};
  for (const auto& prim : primitives) {
    double t0, t1;
    if (!prim.ray_interval(o, d, t0, t1)) continue;
    t0 = std::max(t0, 0.0);
    t1 = std::min(t1, t_max);
    if (t1 <= t0) continue;
    hits.push_back({t0, t1, prim.priority, prim.hu});
    cuts.push_back(t0);
    cuts.push_back(t1);
  }
  std::sort(cuts.begin(), cuts.end());

  double integral = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double len = cuts[i + 1] - cuts[i];
    if (len <= 1e-12) continue;
    const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    float hu = background_hu;
    int best = std::numeric_limits<int>::min();
    for (const auto& h : hits) {
      if (h.t0 <= mid && mid < h.t1 && h.priority > best) {
        best = h.priority;
        hu = h.hu;
      }
    }
    integral += len * hu_to_attenuation_value(hu);
  }
  return integral;
}

namespace {

struct Builder {
  PhantomModel model;
  Side side;
  double s;  // +1 left, -1 right
  std::mt19937_64 rng;

  Builder(Side side_, std::uint64_t seed)
      : side(side_), s(side_sign(side_)), rng(mix_seed(seed, 0x9e7a)) {}

  Vec3 mirror(double x, double y, double z) const { return {s * x, y, z}; }

  double cortical_hu() {
    return std::uniform_real_distribution<double>(900.0, 1150.0)(rng);
  }
  double trabecular_hu() {
    return std::uniform_real_distribution<double>(180.0, 280.0)(rng);
  }

  void add_sphere(const std::string& part, const Vec3& c, double r, int pri,
                  double hu, Label label) {
    PhantomPrimitive p;
    p.kind = PhantomPrimitive::Kind::sphere;
    p.center = c;
    p.radii = Vec3::Constant(r);
    p.priority = pri;
    p.hu = static_cast<float>(hu);
    p.label = label;
    p.part = part;
    model.primitives.push_back(p);
  }

  void add_cylinder(const std::string& part, const Vec3& a, const Vec3& b,
                    double r, int pri, double hu, Label label) {
    PhantomPrimitive p;
    p.kind = PhantomPrimitive::Kind::cylinder;
    p.a = a;
    p.b = b;
    p.radii = Vec3::Constant(r);
    p.priority = pri;
    p.hu = static_cast<float>(hu);
    p.label = label;
    p.part = part;
    model.primitives.push_back(p);
  }

  void add_box(const std::string& part, const Vec3& c, const Mat3& axes,
               const Vec3& half, int pri, double hu, Label label) {
    PhantomPrimitive p;
    p.kind = PhantomPrimitive::Kind::box;
    p.center = c;
    p.axes = axes;
    p.radii = half;
    p.priority = pri;
    p.hu = static_cast<float>(hu);
    p.label = label;
    p.part = part;
    model.primitives.push_back(p);
  }

  void add_ellipsoid(const std::string& part, const Vec3& c, const Vec3& radii,
                     int pri, double hu, Label label) {
    PhantomPrimitive p;
    p.kind = PhantomPrimitive::Kind::ellipsoid;
    p.center = c;
    p.radii = radii;
    p.priority = pri;
    p.hu = static_cast<float>(hu);
    p.label = label;
    p.part = part;
    model.primitives.push_back(p);
  }
};

}  // namespace

Phantom generate_phantom(std::uint64_t seed, Side side) {
  Builder bld(side, seed);
  const double s = bld.s;
  const Label femur = femur_label(side);

  const Vec3 head = bld.mirror(85, 0, 0);
  // Cup opens lateral with a 20 degree inferior tilt and a 78 degree polar
  // opening; the rim then puts the lateral-most point about 32 degrees off
  // the superior axis (a mid-range lateral center edge angle), and the
  // opening clears the femoral neck across the sampled fragment rotations.
  const Vec3 open_dir = Vec3(s * std::cos(deg2rad(17.0)),
                             -std::sin(deg2rad(17.0)), 0.0);
  const double cup_outer = 28.0, cup_inner = 22.0;
  const double opening_polar = 75.0;

  bld.model.head_center = head;
  bld.model.cup_opening_dir = open_dir;
  bld.model.cup_outer_radius = cup_outer;
  bld.model.cup_inner_radius = cup_inner;
  bld.model.cup_opening_polar_deg = opening_polar;

  // Soft tissue envelope.
  bld.add_ellipsoid("body", bld.mirror(52, 5, 1), Vec3(92, 128, 50), 1, 40,
                    Label::background);
  bld.add_cylinder("thigh", head + bld.mirror(0, 8, 0),
                   bld.mirror(118, -118, 0), 36, 2, 45, Label::background);

  // Femur: head sphere, slim neck through the cup opening, wider shaft.
  const double head_cort = bld.cortical_hu();
  const double head_trab = bld.trabecular_hu();
  bld.add_sphere("femoral-head-core", head, 17, 95, head_trab, femur);
  bld.add_sphere("femoral-head", head, 20, 90, head_cort, femur);
  const Vec3 neck_top = head + bld.mirror(4, -8, 0);
  const Vec3 neck_end = head + bld.mirror(15, -40, 0);
  const Vec3 shaft_end = head + bld.mirror(28, -95, 0);
  bld.add_cylinder("femoral-neck-core", neck_top, neck_end, 5, 89,
                   bld.trabecular_hu() - 40.0, femur);
  bld.add_cylinder("femoral-neck", neck_top, neck_end, 8, 88,
                   bld.cortical_hu(), femur);
  bld.add_cylinder("femoral-shaft-core", neck_end, shaft_end, 9, 87,
                   bld.trabecular_hu() - 40.0, femur);
  bld.add_cylinder("femoral-shaft", neck_end, shaft_end, 13, 86,
                   bld.cortical_hu(), femur);

  // Acetabular cup: inner clearance + lateral opening carved from the
  // cortical shell by lower-priority voids.
  bld.add_sphere("joint-space", head, cup_inner, 85, 25, Label::background);
  {
    // Carve sphere through the 75 degree polar circle of the outer shell.
    const double d = 24.0;
    const double rv = std::sqrt(cup_outer * cup_outer + d * d -
                                2.0 * cup_outer * d *
                                    std::cos(deg2rad(opening_polar)));
    bld.add_sphere("cup-opening", head + d * open_dir, rv, 84, 28,
                   Label::background);
  }
  bld.add_sphere("acetabular-cup", head, cup_outer, 70, bld.cortical_hu() + 50.0,
                 Label::pelvis);

  // Supra-acetabular column joining the cup to the iliac blade; the ilium
  // osteotomy passes through it above the cup.
  const Vec3 col_a = head + bld.mirror(-5, 8, -6);
  const Vec3 col_b = head + bld.mirror(-25, 44, -8);
  bld.add_cylinder("ilium-column-core", col_a, col_b, 8.5, 59, bld.trabecular_hu(),
                   Label::pelvis);
  bld.add_cylinder("ilium-column", col_a, col_b, 12, 58, bld.cortical_hu(),
                   Label::pelvis);

  // Iliac blade: a tilted plate with a trabecular core, clear of the cup.
  {
    const Mat3 tilt = rot_x(deg2rad(-10.0)) * rot_y(deg2rad(s * 12.0));
    const Vec3 c = bld.mirror(52, 77, -6);
    bld.add_box("iliac-blade-core", c, tilt, Vec3(33, 42, 4), 61,
                bld.trabecular_hu(), Label::pelvis);
    bld.add_box("iliac-blade", c, tilt, Vec3(36, 45, 6.5), 60, bld.cortical_hu(),
                Label::pelvis);
  }
  // ASIS tubercle.
  bld.add_sphere("asis-knob", bld.mirror(84, 90, 16), 8, 62, bld.cortical_hu(),
                 Label::pelvis);

  // Pubic ramus toward the symphysis.
  const Vec3 pubis_hip = head + bld.mirror(-18, -8, 18);
  const Vec3 pubis_sym = bld.mirror(6, -18, 22);
  bld.add_cylinder("pubis-core", pubis_hip, pubis_sym, 5, 57, bld.trabecular_hu(),
                   Label::pelvis);
  bld.add_cylinder("pubis", pubis_hip, pubis_sym, 8, 56, bld.cortical_hu(),
                   Label::pelvis);

  // Short ischial ramus, posterior-inferior. The inferior ramus loop is not
  // modeled; the ischial osteotomy frees the ramus at its distal end.
  const Vec3 isch_hip = head + bld.mirror(-13, -18, -15);
  const Vec3 isch_end = head + bld.mirror(-29, -34, -17);
  bld.add_cylinder("ischium-core", isch_hip, isch_end, 6, 55, bld.trabecular_hu(),
                   Label::pelvis);
  bld.add_cylinder("ischium", isch_hip, isch_end, 9, 54, bld.cortical_hu(),
                   Label::pelvis);

  std::sort(bld.model.primitives.begin(), bld.model.primitives.end(),
            [](const PhantomPrimitive& a, const PhantomPrimitive& b) {
              return a.priority > b.priority;
            });

  Phantom ph;
  ph.side = side;
  ph.model = bld.model;

  // Grid covering every primitive with a 2 mm margin, 1 mm isotropic.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& prim : ph.model.primitives) {
    Vec3 plo, phi;
    prim.bounding_box(plo, phi);
    lo = lo.cwiseMin(plo);
    hi = hi.cwiseMax(phi);
  }
  lo -= Vec3::Constant(2.0);
  hi += Vec3::Constant(2.0);
  const Vec3 spacing = Vec3::Ones();
  std::array<int, 3> dims;
  for (int a = 0; a < 3; ++a) {
    dims[a] = static_cast<int>(std::ceil(hi[a] - lo[a])) + 1;
  }

  ph.hu = Volume::make(dims[0], dims[1], dims[2], spacing, lo,
                       ph.model.background_hu);
  ph.labels = LabelMap::make_like(ph.hu);

  parallel_for(0, dims[2], [&](std::int64_t k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        const Vec3 p = ph.hu.voxel_center(i, static_cast<int>(j), static_cast<int>(k));
        for (const auto& prim : ph.model.primitives) {
          if (prim.contains(p)) {
            ph.hu.at(i, j, static_cast<int>(k)) = prim.hu;
            ph.labels.at(i, j, static_cast<int>(k)) =
                static_cast<std::uint8_t>(prim.label);
            break;
          }
        }
      }
    }
  });

  // Landmarks. Contralateral points are mirrored virtual positions; the
  // APP needs them even though only one hemipelvis is voxelized.
  const Vec3 asis_ipsi = bld.mirror(84, 90, 24);
  const Vec3 asis_contra = Vec3(-asis_ipsi.x(), asis_ipsi.y(), asis_ipsi.z());
  ph.landmarks.set3(side == Side::left ? kAsisLeft : kAsisRight, asis_ipsi);
  ph.landmarks.set3(side == Side::left ? kAsisRight : kAsisLeft, asis_contra);
  ph.landmarks.set3(kPubicSymphysis, Vec3(0, -20, 24));
  ph.landmarks.set3(femoral_head_name(side), head);
  // Registration landmarks on the rigid (non-fragment) pelvis.
  ph.landmarks.set3("mof", bld.mirror(15, -24, 21));
  ph.landmarks.set3("iof", bld.mirror(36, -44, 0));
  ph.landmarks.set3("gsn", bld.mirror(66, -6, -26));
  ph.landmarks.set3("sps", Vec3(0, -14, 24));
  ph.landmarks.set3("ips", Vec3(0, -26, 24));

  // Rim trace: the superolateral arc of the opening circle.
  {
    const Vec3 n = open_dir;
    const double polar = deg2rad(opening_polar);
    const Vec3 lat = Vec3(s, 0, 0);
    const Vec3 e1 = (lat - lat.dot(n) * n).normalized();
    const Vec3 e2 = n.cross(e1);
    const Vec3 ring_center = head + cup_outer * std::cos(polar) * n;
    const double ring_r = cup_outer * std::sin(polar);
    for (int i = -10; i <= 10; ++i) {
      const double psi = deg2rad(6.0 * i);
      ph.rim.points.push_back(ring_center +
                              ring_r * (std::cos(psi) * e1 + std::sin(psi) * e2));
    }
  }

  // Nominal osteotomy plan. Normals point away from the fragment, near
  // radial about the femoral head and tilted so that the one-signed
  // fragment rotations (forward LR tilt, coverage-increasing AP) open the
  // ilium and pubis gaps rather than close them.
  ph.nominal_cuts[CutName::ilium] = {Vec3(-0.40 * s, 0.89, -0.22).normalized(),
                                     head + bld.mirror(-17, 30, -7)};
  ph.nominal_cuts[CutName::pubis] = {Vec3(-0.80 * s, -0.47, 0.37).normalized(),
                                     bld.mirror(38, -12.7, 19.9)};
  ph.nominal_cuts[CutName::ischium] = {Vec3(-0.66 * s, -0.73, -0.11).normalized(),
                                       head + bld.mirror(-32, -37, -17)};
  ph.nominal_cuts[CutName::posterior] = {Vec3(-0.15 * s, 0.25, -1.0).normalized(),
                                         bld.mirror(70, 5, -31)};

  return ph;
}

}  // namespace fragreg
