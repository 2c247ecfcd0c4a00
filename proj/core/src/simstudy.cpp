// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/simstudy.hpp"

#include "fragreg/parallel.hpp"
#include "fragreg/random.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace fragreg {

namespace {

Vec3 uniform_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0, 1);
  Vec3 v;
  do {
    v = Vec3(normal(rng), normal(rng), normal(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Vec2 uniform_unit_vector_2d(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0, 2 * kPi);
  const double a = angle(rng);
  return {std::cos(a), std::sin(a)};
}

Label nearest_label(const LabelMap& labels, const Vec3& p) {
  const Vec3 c = labels.world_to_voxel(p);
  const int i = static_cast<int>(std::lround(c.x()));
  const int j = static_cast<int>(std::lround(c.y()));
  const int k = static_cast<int>(std::lround(c.z()));
  if (!labels.in_bounds(i, j, k)) return Label::background;
  return static_cast<Label>(labels.at(i, j, k));
}

}  // namespace

RigidPose MovementSample::fragment_pose_app() const {
  RigidPose p;
  p.R = from_euler_xyz_extrinsic(deg2rad(1.0) * fragment_rot_deg);
  p.t = translation_mm;
  return p;
}

RigidPose MovementSample::femur_pose_app() const {
  RigidPose p;
  p.R = from_euler_xyz_extrinsic(deg2rad(1.0) * femur_rot_deg);
  p.t = translation_mm;
  return p;
}

RigidPose movement_world_pose(const RigidPose& pose_app, const AppFrame& app) {
  return app.pose * pose_app * app.pose.inverse();
}

Vec3 kwire_direction(const Vec3& n_if, const Vec3& n_fh, double beta) {
  const Vec3 blend = beta * n_fh + (1.0 - beta) * n_if;
  const double norm = blend.norm();
  if (norm < 1e-12) {
    throw std::runtime_error("kwire_direction: opposed blend vectors");
  }
  return blend / norm;
}

CutPlaneSet perturb_plan(const CutPlaneSet& nominal, const Phantom& phantom,
                         std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x70a1));
  std::uniform_real_distribution<double> angle(0.0, 10.0);
  std::uniform_real_distribution<double> shift(0.0, 5.0);

  // Probes on the cup shell mid-surface; a valid fragment must keep the
  // acetabulum.
  std::vector<Vec3> probes;
  {
    const Vec3 n = phantom.model.cup_opening_dir;
    const Vec3 lat = Vec3(side_sign(phantom.side), 0, 0);
    const Vec3 e1 = (lat - lat.dot(n) * n).normalized();
    const Vec3 e2 = n.cross(e1);
    const double r =
        0.5 * (phantom.model.cup_inner_radius + phantom.model.cup_outer_radius);
    for (const double polar_deg : {100.0, 125.0, 150.0}) {
      const double polar = deg2rad(polar_deg);
      for (const double azim_deg : {0.0, 120.0, 240.0}) {
        const double azim = deg2rad(azim_deg);
        const Vec3 dir = std::cos(polar) * n +
                         std::sin(polar) * (std::cos(azim) * e1 + std::sin(azim) * e2);
        probes.push_back(phantom.model.head_center + r * dir);
      }
    }
  }

  for (int attempt = 0; attempt < 100; ++attempt) {
    CutPlaneSet cand = nominal;
    for (auto& plane : cand.planes) {
      const Mat3 r = rot_axis_angle(uniform_unit_vector(rng), deg2rad(angle(rng)));
      plane.normal = (r * plane.normal).normalized();
      plane.point += shift(rng) * uniform_unit_vector(rng);
    }

    LabelMap carved;
    try {
      carved = chisel_fragment_labels(phantom.labels, cand);
    } catch (const std::exception&) {
      continue;
    }
    int covered = 0;
    for (const auto& p : probes) {
      if (nearest_label(carved, p) == Label::fragment) ++covered;
    }
    if (covered * 10 >= static_cast<int>(probes.size()) * 8) return cand;
  }
  throw std::runtime_error("perturb_plan: 100 consecutive invalid plans");
}

bool movement_collision_free(const MovementSample& move, const LabelMap& labels,
                             const AppFrame& app) {
  const RigidPose w_frag = movement_world_pose(move.fragment_pose_app(), app);
  const RigidPose w_femur = movement_world_pose(move.femur_pose_app(), app);
  const Label femur = femur_label(app.side);
  const auto femur_v = static_cast<std::uint8_t>(femur);
  const auto frag_v = static_cast<std::uint8_t>(Label::fragment);
  const auto pelvis_v = static_cast<std::uint8_t>(Label::pelvis);

  // Moved-femur occupancy on the shared 1 mm grid.
  std::vector<std::uint8_t> femur_occ(labels.size(), 0);
  auto grid_index = [&](const Vec3& p, int& i, int& j, int& k) {
    const Vec3 c = labels.world_to_voxel(p);
    i = static_cast<int>(std::lround(c.x()));
    j = static_cast<int>(std::lround(c.y()));
    k = static_cast<int>(std::lround(c.z()));
    return labels.in_bounds(i, j, k);
  };

  for (int k = 0; k < labels.dims[2]; ++k) {
    for (int j = 0; j < labels.dims[1]; ++j) {
      for (int i = 0; i < labels.dims[0]; ++i) {
        if (labels.at(i, j, k) != femur_v) continue;
        int ii, jj, kk;
        if (!grid_index(w_femur.apply(labels.voxel_center(i, j, k)), ii, jj, kk)) {
          continue;
        }
        if (labels.at(ii, jj, kk) == pelvis_v) return false;
        femur_occ[labels.index(ii, jj, kk)] = 1;
      }
    }
  }
  for (int k = 0; k < labels.dims[2]; ++k) {
    for (int j = 0; j < labels.dims[1]; ++j) {
      for (int i = 0; i < labels.dims[0]; ++i) {
        if (labels.at(i, j, k) != frag_v) continue;
        int ii, jj, kk;
        if (!grid_index(w_frag.apply(labels.voxel_center(i, j, k)), ii, jj, kk)) {
          continue;
        }
        if (labels.at(ii, jj, kk) == pelvis_v) return false;
        if (femur_occ[labels.index(ii, jj, kk)]) return false;
      }
    }
  }
  return true;
}

MovementSample sample_movement(Side side, const LabelMap& labels,
                               const AppFrame& app, std::uint64_t seed) {
  if (labels.count(Label::fragment) == 0) {
    throw std::runtime_error("sample_movement: label map has no fragment");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x3017));
  const double s = side_sign(side);

  std::uniform_real_distribution<double> frag_lr(0, 20), frag_is(0, 6), frag_ap(0, 25);
  std::uniform_real_distribution<double> fem_lr(0, 20), fem_is(-5, 5), fem_ap(-2, 2);
  std::uniform_real_distribution<double> t_lr(-2.5, 7.5), t_is(-4, 0), t_ap(-1, 5);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    MovementSample m;
    // LR rotation always tilts the fragment the same way; IS/AP rotation
    // and LR translation directions flip with the patient side. The AP
    // direction rotates the cup opening inferiorly (coverage increases).
    m.fragment_rot_deg = Vec3(-frag_lr(rng), s * frag_is(rng), -s * frag_ap(rng));
    m.femur_rot_deg = Vec3(-fem_lr(rng), s * fem_is(rng), s * fem_ap(rng));
    m.translation_mm = Vec3(s * t_lr(rng), t_is(rng), t_ap(rng));
    if (movement_collision_free(m, labels, app)) return m;
  }
  throw std::runtime_error("sample_movement: 1000 consecutive colliding draws");
}

namespace {

struct MovedSampler {
  const LabelMap& labels;
  RigidPose frag_inv, femur_inv;
  std::uint8_t frag_v, femur_v;

  MovedSampler(const LabelMap& labels_, const MovementSample& move,
               const AppFrame& app)
      : labels(labels_),
        frag_inv(movement_world_pose(move.fragment_pose_app(), app).inverse()),
        femur_inv(movement_world_pose(move.femur_pose_app(), app).inverse()),
        frag_v(static_cast<std::uint8_t>(Label::fragment)),
        femur_v(static_cast<std::uint8_t>(femur_label(app.side))) {}

  // Returns the moved-body label covering world point p (fragment wins), or
  // background.
  Label covering(const Vec3& p, Vec3* source_point = nullptr) const {
    const Vec3 pf = frag_inv.apply(p);
    if (nearest_label(labels, pf) == Label::fragment) {
      if (source_point) *source_point = pf;
      return Label::fragment;
    }
    const Vec3 pm = femur_inv.apply(p);
    if (static_cast<std::uint8_t>(nearest_label(labels, pm)) == femur_v) {
      if (source_point) *source_point = pm;
      return static_cast<Label>(femur_v);
    }
    return Label::background;
  }
};

}  // namespace

Volume build_warped_volume(const Volume& ct_hu, const LabelMap& labels,
                           const MovementSample& move, const AppFrame& app,
                           std::uint64_t seed) {
  if (ct_hu.dims != labels.dims) {
    throw std::invalid_argument("build_warped_volume: grid mismatch");
  }
  Volume out = ct_hu;
  const MovedSampler sampler(labels, move, app);
  const auto frag_v = static_cast<std::uint8_t>(Label::fragment);
  const auto cut_v = static_cast<std::uint8_t>(Label::cut);
  const auto femur_v = static_cast<std::uint8_t>(femur_label(app.side));

  std::mt19937_64 alpha_rng(mix_seed(seed, 0x4a11));
  const double alpha = std::uniform_real_distribution<double>(35, 55)(alpha_rng);

  parallel_for(0, ct_hu.dims[2], [&](std::int64_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < ct_hu.dims[1]; ++j) {
      for (int i = 0; i < ct_hu.dims[0]; ++i) {
        const Vec3 p = ct_hu.voxel_center(i, j, k);
        Vec3 src;
        const Label moved = sampler.covering(p, &src);
        if (moved != Label::background) {
          out.at(i, j, k) = trilinear_sample(ct_hu, src);
          continue;
        }
        const std::uint8_t orig = labels.at(i, j, k);
        if (orig == frag_v || orig == femur_v || orig == cut_v) {
          // Vacated bone (or the chiseled band): muscle noise N(alpha, 20).
          SplitMix64 g(mix_seed(seed, ct_hu.index(i, j, k), 0x6b));
          std::normal_distribution<double> muscle(alpha, 20.0);
          out.at(i, j, k) = static_cast<float>(muscle(g));
        }
      }
    }
  });
  return out;
}

LabelMap build_moved_labels(const LabelMap& labels, const MovementSample& move,
                            const AppFrame& app) {
  LabelMap out = labels;
  const MovedSampler sampler(labels, move, app);
  const auto frag_v = static_cast<std::uint8_t>(Label::fragment);
  const auto cut_v = static_cast<std::uint8_t>(Label::cut);
  const auto femur_v = static_cast<std::uint8_t>(femur_label(app.side));

  parallel_for(0, labels.dims[2], [&](std::int64_t kk) {
    const int k = static_cast<int>(kk);
    for (int j = 0; j < labels.dims[1]; ++j) {
      for (int i = 0; i < labels.dims[0]; ++i) {
        const Label moved = sampler.covering(labels.voxel_center(i, j, k));
        if (moved != Label::background) {
          out.at(i, j, k) = static_cast<std::uint8_t>(moved);
          continue;
        }
        const std::uint8_t orig = labels.at(i, j, k);
        if (orig == frag_v || orig == femur_v || orig == cut_v) {
          out.at(i, j, k) = static_cast<std::uint8_t>(Label::background);
        }
      }
    }
  });
  return out;
}

namespace {

struct WirePrimitive {
  Vec3 base;  // p_f
  Vec3 toward_insertion;
  double body_len, radius, tip_h;

  bool contains(const Vec3& p) const {
    const Vec3 rel = p - base;
    const double axial = rel.dot(toward_insertion);
    const double radial2 = (rel - axial * toward_insertion).squaredNorm();
    if (axial >= 0 && axial <= body_len) return radial2 <= radius * radius;
    if (axial < 0 && axial >= -tip_h) {
      const double r = radius * (1.0 + axial / tip_h);  // tapers to the tip
      return radial2 <= r * r;
    }
    return false;
  }
};

}  // namespace

std::vector<KWireSpec> insert_kwires(Volume& hu, const LabelMap& labels,
                                     const LabelMap& moved_labels,
                                     const MovementSample& move,
                                     const AppFrame& app, std::uint64_t seed) {
  if (moved_labels.count(Label::fragment) == 0) {
    throw std::runtime_error("insert_kwires: no relocated fragment");
  }
  std::mt19937_64 rng(mix_seed(seed, 0x57e3));

  // Post-osteotomy iliac crest: pelvis surface voxels in the top 12 mm
  // along the IS axis.
  const Vec3 is_axis = app.is_axis();
  const auto pelvis_v = static_cast<std::uint8_t>(Label::pelvis);
  std::vector<Vec3> crest;
  double is_max = -1e30;
  for (int k = 0; k < labels.dims[2]; ++k) {
    for (int j = 0; j < labels.dims[1]; ++j) {
      for (int i = 0; i < labels.dims[0]; ++i) {
        if (labels.at(i, j, k) != pelvis_v) continue;
        is_max = std::max(is_max, is_axis.dot(labels.voxel_center(i, j, k)));
      }
    }
  }
  for (int k = 1; k + 1 < labels.dims[2]; ++k) {
    for (int j = 1; j + 1 < labels.dims[1]; ++j) {
      for (int i = 1; i + 1 < labels.dims[0]; ++i) {
        if (labels.at(i, j, k) != pelvis_v) continue;
        const Vec3 p = labels.voxel_center(i, j, k);
        if (is_axis.dot(p) < is_max - 12.0) continue;
        const bool surface = !labels.at(i - 1, j, k) || !labels.at(i + 1, j, k) ||
                             !labels.at(i, j - 1, k) || !labels.at(i, j + 1, k) ||
                             !labels.at(i, j, k - 1) || !labels.at(i, j, k + 1);
        if (surface) crest.push_back(p);
      }
    }
  }
  if (crest.empty()) throw std::runtime_error("insert_kwires: no crest surface");

  // Moved fragment voxel list for closest-point queries.
  std::vector<Vec3> frag_pts;
  const auto frag_v = static_cast<std::uint8_t>(Label::fragment);
  for (int k = 0; k < moved_labels.dims[2]; ++k) {
    for (int j = 0; j < moved_labels.dims[1]; ++j) {
      for (int i = 0; i < moved_labels.dims[0]; ++i) {
        if (moved_labels.at(i, j, k) == frag_v) {
          frag_pts.push_back(moved_labels.voxel_center(i, j, k));
        }
      }
    }
  }

  auto surface_normal = [&](const Vec3& p) {
    // Offset from the centroid of occupied neighbors points outward.
    Vec3 centroid = Vec3::Zero();
    int count = 0;
    const Vec3 c = labels.world_to_voxel(p);
    const int ci = static_cast<int>(std::lround(c.x()));
    const int cj = static_cast<int>(std::lround(c.y()));
    const int ck = static_cast<int>(std::lround(c.z()));
    for (int dk = -2; dk <= 2; ++dk) {
      for (int dj = -2; dj <= 2; ++dj) {
        for (int di = -2; di <= 2; ++di) {
          const int i = ci + di, j = cj + dj, k = ck + dk;
          if (!labels.in_bounds(i, j, k) || labels.at(i, j, k) != pelvis_v) continue;
          centroid += labels.voxel_center(i, j, k);
          ++count;
        }
      }
    }
    if (count == 0) return is_axis;
    const Vec3 n = p - centroid / count;
    return n.norm() > 1e-9 ? Vec3(n.normalized()) : is_axis;
  };

  const Vec3 moved_head =
      movement_world_pose(move.femur_pose_app(), app).apply(app.femoral_head);

  std::uniform_int_distribution<std::size_t> pick(0, crest.size() - 1);
  std::vector<KWireSpec> wires;

  for (int w = 0; w < 2; ++w) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const Vec3 p_i = crest[pick(rng)];
      if (w == 1 && (p_i - wires[0].insertion).norm() < 20.0) continue;

      const Vec3 n_i = surface_normal(p_i);
      double best_d2 = 1e30;
      Vec3 closest = frag_pts[0];
      for (const auto& q : frag_pts) {
        const double d2 = (q - p_i).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          closest = q;
        }
      }
      const Vec3 n_f = (closest - p_i).normalized();
      const Vec3 n_if = (n_i + n_f).normalized();
      const Vec3 n_fh = (moved_head - p_i).normalized();

      for (double beta : {0.5, 0.6, 0.7, 0.8, 0.9, 1.0}) {
        const Vec3 dir = kwire_direction(n_if, n_fh, beta);
        // March to the first relocated-fragment voxel.
        double hit_t = -1;
        for (double t = 2.0; t <= 130.0; t += 1.0) {
          if (nearest_label(moved_labels, p_i + t * dir) == Label::fragment) {
            hit_t = t;
            break;
          }
        }
        if (hit_t < 0) continue;
        const double dist = hit_t;
        if (dist < 40.0 || dist > 110.0) continue;

        KWireSpec spec;
        spec.insertion = p_i;
        spec.direction = dir;
        spec.target = p_i + hit_t * dir;
        spec.body_radius_mm = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
        spec.body_length_mm =
            std::uniform_real_distribution<double>(190.5, 266.7)(rng);
        spec.tip_height_mm = std::uniform_real_distribution<double>(4.0, 6.0)(rng);
        spec.hu = std::uniform_real_distribution<double>(14000, 26000)(rng);
        wires.push_back(spec);
        placed = true;
        break;
      }
    }
    if (!placed) throw std::runtime_error("insert_kwires: sampling failed");
  }

  // Rasterize with 4x supersampling, blending by occupancy fraction.
  for (const auto& spec : wires) {
    WirePrimitive prim;
    prim.base = spec.target;
    prim.toward_insertion = spec.direction * -1.0;
    prim.body_len = spec.body_length_mm;
    prim.radius = spec.body_radius_mm;
    prim.tip_h = spec.tip_height_mm;

    const Vec3 body_end = spec.target - spec.direction * spec.body_length_mm;
    const Vec3 tip_end = spec.target + spec.direction * spec.tip_height_mm;
    Vec3 lo = spec.target.cwiseMin(body_end).cwiseMin(tip_end) -
              Vec3::Constant(spec.body_radius_mm + 1.0);
    Vec3 hi = spec.target.cwiseMax(body_end).cwiseMax(tip_end) +
              Vec3::Constant(spec.body_radius_mm + 1.0);

    const Vec3 lo_vox = hu.world_to_voxel(lo);
    const Vec3 hi_vox = hu.world_to_voxel(hi);
    const int i0 = std::max(0, static_cast<int>(std::floor(lo_vox.x())));
    const int j0 = std::max(0, static_cast<int>(std::floor(lo_vox.y())));
    const int k0 = std::max(0, static_cast<int>(std::floor(lo_vox.z())));
    const int i1 = std::min(hu.dims[0] - 1, static_cast<int>(std::ceil(hi_vox.x())));
    const int j1 = std::min(hu.dims[1] - 1, static_cast<int>(std::ceil(hi_vox.y())));
    const int k1 = std::min(hu.dims[2] - 1, static_cast<int>(std::ceil(hi_vox.z())));

    parallel_for(k0, k1 + 1, [&](std::int64_t kk) {
      const int k = static_cast<int>(kk);
      for (int j = j0; j <= j1; ++j) {
        for (int i = i0; i <= i1; ++i) {
          const Vec3 c = hu.voxel_center(i, j, k);
          int inside = 0;
          for (int sz = 0; sz < 4; ++sz) {
            for (int sy = 0; sy < 4; ++sy) {
              for (int sx = 0; sx < 4; ++sx) {
                const Vec3 sub =
                    c + hu.spacing.cwiseProduct(
                            Vec3((sx + 0.5) / 4.0 - 0.5, (sy + 0.5) / 4.0 - 0.5,
                                 (sz + 0.5) / 4.0 - 0.5));
                if (prim.contains(sub)) ++inside;
              }
            }
          }
          if (inside == 0) continue;
          const double frac = inside / 64.0;
          float& vox = hu.at(i, j, k);
          vox = static_cast<float>(frac * spec.hu + (1.0 - frac) * vox);
        }
      }
    });
  }
  return wires;
}

ViewSampleResult sample_view_set(const AppFrame& app,
                                 const CameraGeometry& intrinsics,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x91ef));
  const double s = side_sign(app.side);
  const Mat3 a_rot = app.pose.R;

  // Base AP view: APP axes aligned to the camera, head at 80% SDD on the
  // principal ray, then the patient shifted 25 mm along LR and 35 mm along
  // IS to center the pelvis.
  CameraGeometry base = intrinsics;
  base.extrinsic.R = a_rot.transpose();
  const Vec3 head_cam_target(25.0 * s, -35.0, 0.80 * intrinsics.sdd);
  base.extrinsic.t = head_cam_target - base.extrinsic.R * app.femoral_head;

  // The device orbit: axis along IS, isocenter on the principal ray at 80%
  // SDD of the unperturbed AP view.
  const Vec3 axis_w = app.is_axis();
  const Vec3 iso_w = base.extrinsic.inverse().apply(Vec3(0, 0, 0.80 * intrinsics.sdd));

  auto perturb_in_app = [&](const CameraGeometry& cam, double max_rot_deg,
                            double trans_lo, double trans_hi) {
    std::uniform_real_distribution<double> rot_mag(-max_rot_deg, max_rot_deg);
    std::uniform_real_distribution<double> trans_mag(trans_lo, trans_hi);
    RigidPose p;
    p.R = rot_axis_angle(uniform_unit_vector(rng), deg2rad(rot_mag(rng)));
    p.t = trans_mag(rng) * uniform_unit_vector(rng);
    CameraGeometry out = cam;
    out.extrinsic = cam.extrinsic * (app.pose * p * app.pose.inverse());
    return out;
  };

  ViewSampleResult result;
  result.views[0] = perturb_in_app(base, 10.0, 0.0, 10.0);

  std::normal_distribution<double> angle2(-10.0, 3.0), angle3(15.0, 3.0);
  result.orbital_angles_deg = {0.0, angle2(rng), angle3(rng)};
  for (int v = 1; v < 3; ++v) {
    const CameraGeometry orbital = orbital_view_geometry(
        result.views[0], iso_w, axis_w, result.orbital_angles_deg[v]);
    result.views[v] = perturb_in_app(orbital, 2.0, -2.0, 2.0);
  }

  // Orbit expressed in the first view's camera coordinates.
  result.orbit_in_view1.isocenter_cam = result.views[0].extrinsic.apply(iso_w);
  result.orbit_in_view1.axis_cam = result.views[0].extrinsic.R * axis_w;
  return result;
}

namespace {

// True cut trace on the static pelvis: pelvis surface voxels within 1.2 mm
// of the plane, projected onto it.
std::vector<Vec3> true_cut_points(const LabelMap& labels, const CutPlane& plane) {
  const auto pelvis_v = static_cast<std::uint8_t>(Label::pelvis);
  std::vector<Vec3> pts;
  for (int k = 1; k + 1 < labels.dims[2]; ++k) {
    for (int j = 1; j + 1 < labels.dims[1]; ++j) {
      for (int i = 1; i + 1 < labels.dims[0]; ++i) {
        if (labels.at(i, j, k) != pelvis_v) continue;
        const Vec3 p = labels.voxel_center(i, j, k);
        const double d = plane.signed_distance(p);
        if (std::abs(d) > 1.2) continue;
        const bool surface = !labels.at(i - 1, j, k) || !labels.at(i + 1, j, k) ||
                             !labels.at(i, j - 1, k) || !labels.at(i, j + 1, k) ||
                             !labels.at(i, j, k - 1) || !labels.at(i, j, k + 1);
        if (surface) pts.push_back(p - d * plane.normal);
      }
    }
  }
  return pts;
}

}  // namespace

SimulatedAnnotations simulate_annotations(
    const Phantom& phantom, const CutPlaneSet& true_cuts,
    const LabelMap& labels, const LabelMap& moved_labels,
    const std::array<CameraGeometry, 3>& views, std::uint64_t seed,
    const AnnotationNoiseOptions& opts) {
  std::mt19937_64 rng(mix_seed(seed, 0xa2071));
  SimulatedAnnotations out;

  const Volume bone_mask =
      mask_volume(moved_labels, [](Label l) { return l != Label::background; });

  for (int view_id = 0; view_id < 3; ++view_id) {
    const CameraGeometry& cam = views[view_id];
    const Vec3 src_w = cam.source_world();
    const Vec3 view_dir = cam.extrinsic.inverse().rotate(Vec3(0, 0, 1));

    for (CutName cut : {CutName::ilium, CutName::pubis}) {
      const CutPlane& plane = true_cuts[cut];
      std::vector<Vec3> pts = true_cut_points(labels, plane);
      if (pts.size() > 400) {
        std::vector<Vec3> sub;
        sub.reserve(400);
        for (std::size_t i = 0; i < 400; ++i) {
          sub.push_back(pts[i * pts.size() / 400]);
        }
        pts.swap(sub);
      }
      if (pts.empty()) continue;

      // Looking approximately down the cut line: plane normal within 20
      // degrees of perpendicular to the view axis.
      const bool down_cut =
          std::abs(plane.normal.dot(view_dir)) < std::sin(deg2rad(20.0));

      CutAnnotation2D ann;
      ann.view_id = view_id;
      ann.cut = cut;

      for (const auto& q : pts) {
        const Vec2 px = cam.project_world(q);
        if (!px.allFinite() || px.x() < 0 || px.y() < 0 || px.x() > cam.cols - 1 ||
            px.y() > cam.rows - 1) {
          continue;
        }
        // Surface crossings of the detector->source ray near q decide
        // visibility and the entry/exit semantics.
        const Vec3 det_w = cam.detector_point_world(px.x(), px.y());
        const Vec3 dir = (src_w - det_w).normalized();
        const double q_t = (q - det_w).dot(dir);

        bool was_inside = trilinear_sample(bone_mask, det_w) >= 0.5;
        double best_dt = 1.5;
        int crossing = -1;  // 0 = exit, 1 = entry (moving detector->source)
        const double total = (src_w - det_w).norm();
        for (double t = 0.5; t <= total; t += 0.5) {
          const bool now = trilinear_sample(bone_mask, det_w + t * dir) >= 0.5;
          if (now != was_inside) {
            const double dt = std::abs(t - 0.25 - q_t);
            if (dt < best_dt) {
              best_dt = dt;
              crossing = now ? 1 : 0;
            }
            was_inside = now;
          }
        }
        if (crossing < 0) continue;  // occluded by other bone along the ray

        CutPixel cp;
        cp.u = px.x();
        cp.v = px.y();
        cp.kind = down_cut ? CutPixelKind::entry_and_exit
                           : (crossing == 1 ? CutPixelKind::entry
                                            : CutPixelKind::exit);
        ann.pixels.push_back(cp);
      }
      if (ann.pixels.size() < 6) continue;

      // Order along the cut's 2D principal axis.
      Vec2 mean = Vec2::Zero();
      for (const auto& cp : ann.pixels) mean += Vec2(cp.u, cp.v);
      mean /= double(ann.pixels.size());
      Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
      for (const auto& cp : ann.pixels) {
        const Vec2 d = Vec2(cp.u, cp.v) - mean;
        cov += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
      const Vec2 axis = eig.eigenvectors().col(1);
      const Vec2 minor = eig.eigenvectors().col(0);
      std::sort(ann.pixels.begin(), ann.pixels.end(),
                [&](const CutPixel& a, const CutPixel& b) {
                  return axis.dot(Vec2(a.u, a.v)) < axis.dot(Vec2(b.u, b.v));
                });

      if (opts.enable_noise && opts.erase_fraction > 0 && ann.pixels.size() > 12) {
        // Erase groups along the principal axis to mimic low-contrast gaps.
        const int n = static_cast<int>(ann.pixels.size());
        std::uniform_int_distribution<int> n_gaps_d(1, 2);
        const int n_gaps = n_gaps_d(rng);
        std::vector<char> erased(n, 0);
        for (int g = 0; g < n_gaps; ++g) {
          const int len = std::max(
              1, static_cast<int>(opts.erase_fraction * n / n_gaps));
          std::uniform_int_distribution<int> start_d(n / 6, std::max(n / 6 + 1, n - len - n / 6));
          const int start = start_d(rng);
          for (int i = start; i < std::min(n, start + len); ++i) erased[i] = 1;
        }
        std::vector<CutPixel> kept;
        for (int i = 0; i < n; ++i) {
          if (!erased[i]) kept.push_back(ann.pixels[i]);
        }
        if (kept.size() >= 6) ann.pixels.swap(kept);
      }

      if (opts.enable_noise && opts.warp_corner_sigma_px > 0) {
        // Smooth random warp interpolated from displacements at the corners
        // of the oriented bounding box.
        double a_lo = 1e30, a_hi = -1e30, m_lo = 1e30, m_hi = -1e30;
        for (const auto& cp : ann.pixels) {
          const Vec2 p(cp.u, cp.v);
          a_lo = std::min(a_lo, axis.dot(p));
          a_hi = std::max(a_hi, axis.dot(p));
          m_lo = std::min(m_lo, minor.dot(p));
          m_hi = std::max(m_hi, minor.dot(p));
        }
        std::normal_distribution<double> dn(0.0, opts.warp_corner_sigma_px);
        Vec2 corner[2][2];
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) corner[i][j] = Vec2(dn(rng), dn(rng));
        }
        const double a_span = std::max(1e-9, a_hi - a_lo);
        const double m_span = std::max(1e-9, m_hi - m_lo);
        for (auto& cp : ann.pixels) {
          const Vec2 p(cp.u, cp.v);
          const double fa = (axis.dot(p) - a_lo) / a_span;
          const double fm = (minor.dot(p) - m_lo) / m_span;
          const Vec2 d = (1 - fa) * ((1 - fm) * corner[0][0] + fm * corner[0][1]) +
                         fa * ((1 - fm) * corner[1][0] + fm * corner[1][1]);
          cp.u += d.x();
          cp.v += d.y();
        }
      }

      out.annotations.push_back(std::move(ann));
    }
  }

  // Landmark noise: offsets along uniform directions with normally
  // distributed signed magnitudes.
  out.noisy_landmarks = phantom.landmarks;
  if (opts.enable_noise) {
    std::normal_distribution<double> mag3(0.0, opts.landmark_3d_sigma_mm);
    for (const auto& [name, p] : phantom.landmarks.all3()) {
      out.noisy_landmarks.set3(name, p + mag3(rng) * uniform_unit_vector(rng));
    }
  }
  std::normal_distribution<double> mag2(0.0, opts.landmark_2d_sigma_px);
  for (int view_id = 0; view_id < 3; ++view_id) {
    LandmarkSet lm2;
    for (const auto& [name, p] : phantom.landmarks.all3()) {
      Vec2 px = views[view_id].project_world(p);
      if (opts.enable_noise) px += mag2(rng) * uniform_unit_vector_2d(rng);
      lm2.set2(name, px);
    }
    out.noisy_landmarks_2d.push_back(std::move(lm2));
  }
  return out;
}

TrialRecord simulate_trial(const Phantom& phantom, int trial_id,
                           std::uint64_t seed, const TrialOptions& opts) {
  TrialRecord rec;
  rec.trial_id = trial_id;
  rec.seed = seed;
  rec.side = phantom.side;
  rec.nominal_cuts = phantom.nominal_cuts;

  const std::uint64_t base = mix_seed(seed, static_cast<std::uint64_t>(trial_id));
  const AppFrame app = build_app_frame(phantom.landmarks, phantom.side);

  rec.true_cuts = perturb_plan(phantom.nominal_cuts, phantom, mix_seed(base, 1));
  rec.labels_true_fragment = chisel_fragment_labels(phantom.labels, rec.true_cuts);
  rec.movement =
      sample_movement(phantom.side, rec.labels_true_fragment, app, mix_seed(base, 2));

  Volume warped = build_warped_volume(phantom.hu, rec.labels_true_fragment,
                                      rec.movement, app, mix_seed(base, 3));
  const LabelMap moved =
      build_moved_labels(rec.labels_true_fragment, rec.movement, app);
  rec.wires = insert_kwires(warped, rec.labels_true_fragment, moved, rec.movement,
                            app, mix_seed(base, 4));

  const ViewSampleResult vs =
      sample_view_set(app, CameraGeometry::default_carm(), mix_seed(base, 5));
  rec.view_geometry = vs.views;
  rec.orbit_in_view1 = vs.orbit_in_view1;

  const Volume att = hu_to_attenuation(warped);
  for (int v = 0; v < 3; ++v) {
    rec.intensity_images[v] =
        simulate_fluoro(att, vs.views[v], opts.photons, mix_seed(base, 6 + v));
  }

  rec.annotations =
      simulate_annotations(phantom, rec.true_cuts, rec.labels_true_fragment,
                           moved, vs.views, mix_seed(base, 9), opts.annotation_noise);
  return rec;
}

}  // namespace fragreg
