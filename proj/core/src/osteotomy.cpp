// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/osteotomy.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace fragreg {

const char* cut_name_str(CutName c) {
  switch (c) {
    case CutName::ilium: return "ilium";
    case CutName::pubis: return "pubis";
    case CutName::ischium: return "ischium";
    case CutName::posterior: return "posterior";
  }
  return "unknown";
}

CutName cut_name_from_str(const std::string& s) {
  for (CutName c : {CutName::ilium, CutName::pubis, CutName::ischium,
                    CutName::posterior}) {
    if (s == cut_name_str(c)) return c;
  }
  throw std::invalid_argument("unknown cut name: " + s);
}

void CutPlaneSet::validate() const {
  for (const auto& p : planes) {
    if (std::abs(p.normal.norm() - 1.0) > 1e-6) {
      throw std::invalid_argument("cut plane normal must be unit length");
    }
  }
  for (std::size_t i = 0; i < planes.size(); ++i) {
    for (std::size_t j = i + 1; j < planes.size(); ++j) {
      const bool same_n = (planes[i].normal - planes[j].normal).norm() < 1e-9;
      const bool same_d = std::abs(planes[i].signed_distance(planes[j].point)) < 1e-9;
      if (same_n && same_d) {
        throw std::invalid_argument("cut planes must be mutually distinct");
      }
    }
  }
}

LabelMap chisel_fragment_labels(const LabelMap& pelvis_labels,
                                const CutPlaneSet& cuts) {
  cuts.validate();
  if (pelvis_labels.count(Label::pelvis) == 0) {
    throw std::runtime_error("chisel_fragment_labels: empty pelvis label");
  }

  const int nx = pelvis_labels.dims[0], ny = pelvis_labels.dims[1],
            nz = pelvis_labels.dims[2];
  LabelMap out = pelvis_labels;

  // 0 = not candidate, 1 = candidate fragment, 2 = candidate cut.
  std::vector<std::uint8_t> cand(pelvis_labels.size(), 0);
  const double half_chisel = 0.5 * kChiselWidthMm;

  bool any = false;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (!pelvis_labels.is(i, j, k, Label::pelvis)) continue;
        const Vec3 p = pelvis_labels.voxel_center(i, j, k);
        bool inside = true;
        bool near_cut = false;
        for (const auto& plane : cuts.planes) {
          const double d = plane.signed_distance(p);
          if (d > 0) {
            inside = false;
            break;
          }
          if (-d <= half_chisel) near_cut = true;
        }
        if (!inside) continue;
        cand[pelvis_labels.index(i, j, k)] = near_cut ? 2 : 1;
        any = true;
      }
    }
  }
  if (!any) {
    throw std::runtime_error("chisel_fragment_labels: cutting planes produce no fragment");
  }

  // Largest 26-connected component of all candidates; others revert to
  // pelvis.
  std::vector<std::int32_t> comp(pelvis_labels.size(), -1);
  std::int32_t n_comp = 0;
  std::size_t best_size = 0;
  std::int32_t best_comp = -1;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < cand.size(); ++s) {
    if (!cand[s] || comp[s] >= 0) continue;
    std::size_t size = 0;
    stack.push_back(s);
    comp[s] = n_comp;
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      ++size;
      const int i = static_cast<int>(cur % nx);
      const int j = static_cast<int>((cur / nx) % ny);
      const int k = static_cast<int>(cur / (std::size_t(nx) * ny));
      for (int dk = -1; dk <= 1; ++dk) {
        for (int dj = -1; dj <= 1; ++dj) {
          for (int di = -1; di <= 1; ++di) {
            if (!di && !dj && !dk) continue;
            const int ii = i + di, jj = j + dj, kk = k + dk;
            if (ii < 0 || jj < 0 || kk < 0 || ii >= nx || jj >= ny || kk >= nz) continue;
            const std::size_t nb = pelvis_labels.index(ii, jj, kk);
            if (cand[nb] && comp[nb] < 0) {
              comp[nb] = n_comp;
              stack.push_back(nb);
            }
          }
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_comp = n_comp;
    }
    ++n_comp;
  }

  for (std::size_t s = 0; s < cand.size(); ++s) {
    if (!cand[s]) continue;
    if (comp[s] != best_comp) continue;  // reverted islands keep pelvis label
    out.voxels[s] = static_cast<std::uint8_t>(cand[s] == 2 ? Label::cut
                                                           : Label::fragment);
  }
  return out;
}

std::vector<Vec3> cut_annotations_to_3d(const CutAnnotation2D& ann,
                                        const CameraGeometry& cam,
                                        const RigidPose& pelvis_pose,
                                        const Volume& bone_mask) {
  std::vector<Vec3> out;
  const RigidPose world_to_vol = pelvis_pose.inverse();
  const Vec3 src_w = cam.source_world();

  const double coarse_step = 0.25;  // mm
  const double occupancy = 0.5;

  auto inside = [&](const Vec3& p_vol) {
    return trilinear_sample(bone_mask, p_vol) >= occupancy;
  };

  for (const auto& px : ann.pixels) {
    const Vec3 det_w = cam.detector_point_world(px.u, px.v);
    // March from the detector towards the source.
    const Vec3 dir_w = (src_w - det_w).normalized();
    const double total = (src_w - det_w).norm();

    const Vec3 p0 = world_to_vol.apply(det_w);
    const Vec3 dv = world_to_vol.rotate(dir_w);

    bool was_inside = false;
    double t_prev = 0;
    for (double t = 0; t <= total; t += coarse_step) {
      const bool now = inside(p0 + t * dv);
      if (now != was_inside) {
        // Bisect the crossing between t_prev and t.
        double a = t_prev, b = t;
        for (int it = 0; it < 24; ++it) {
          const double m = 0.5 * (a + b);
          if (inside(p0 + m * dv) == was_inside) a = m;
          else b = m;
        }
        const double tc = 0.5 * (a + b);
        const bool is_entry = !was_inside;  // background -> bone
        const bool keep = px.kind == CutPixelKind::entry_and_exit ||
                          (px.kind == CutPixelKind::entry && is_entry) ||
                          (px.kind == CutPixelKind::exit && !is_entry);
        if (keep) out.push_back(p0 + tc * dv);  // volume-frame point
        was_inside = now;
      }
      t_prev = t;
    }
  }
  return out;
}

CutPlane fit_plane_least_squares(const std::vector<Vec3>& points) {
  if (points.size() < 3) {
    throw std::invalid_argument("fit_plane_least_squares: need >= 3 points");
  }
  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= double(points.size());

  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  CutPlane plane;
  plane.normal = eig.eigenvectors().col(0).normalized();
  plane.point = centroid;
  return plane;
}

CutPlane fit_cut_plane_ransac(const std::vector<Vec3>& points_app, CutName cut,
                              const Vec3& head_center_app, Side side,
                              const RansacPlaneOptions& opts) {
  // Anatomy pruning in APP axes: LR = x, IS = y, AP = z.
  std::vector<Vec3> pts;
  for (const auto& p : points_app) {
    const double medial_offset = side_sign(side) * (p.x() - head_center_app.x());
    if (medial_offset < -kIpsilateralMarginMm) continue;  // contralateral
    if (cut == CutName::ilium && p.y() <= head_center_app.y()) continue;
    if (cut == CutName::pubis && p.z() <= head_center_app.z()) continue;
    pts.push_back(p);
  }
  if (pts.size() < 3) {
    throw std::runtime_error(
        std::string("fit_cut_plane_ransac: fewer than 3 points after pruning for ") +
        cut_name_str(cut));
  }

  std::mt19937_64 rng(opts.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);

  std::size_t best_inliers = 0;
  double best_spread = -1;
  CutPlane best;
  std::vector<char> inlier_mask(pts.size()), best_mask(pts.size());

  for (int it = 0; it < opts.iterations; ++it) {
    const std::size_t a = pick(rng), b = pick(rng), c = pick(rng);
    if (a == b || b == c || a == c) continue;
    const Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    const double nn = n.norm();
    if (nn < 1e-9) continue;
    CutPlane cand{n / nn, pts[a]};

    std::size_t count = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const bool in = std::abs(cand.signed_distance(pts[i])) <= opts.inlier_threshold_mm;
      inlier_mask[i] = in;
      count += in;
    }
    if (count > best_inliers) {
      best_inliers = count;
      best = cand;
      best_mask = inlier_mask;
    }
  }
  if (best_inliers < 3) {
    throw std::runtime_error("fit_cut_plane_ransac: consensus set too small");
  }

  std::vector<Vec3> inliers;
  inliers.reserve(best_inliers);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (best_mask[i]) inliers.push_back(pts[i]);
  }
  CutPlane refit = fit_plane_least_squares(inliers);
  // Keep the normal orientation of the consensus plane.
  if (refit.normal.dot(best.normal) < 0) refit.normal = -refit.normal;
  (void)best_spread;
  return refit;
}

namespace {

CutPlane align_to(const CutPlane& estimate, const CutPlane& planned) {
  CutPlane p = estimate;
  if (p.normal.dot(planned.normal) < 0) p.normal = -p.normal;
  return p;
}

}  // namespace

LabelMap rebuild_fragment_shape(const CutPlaneSet& planned,
                                const std::optional<CutPlane>& ilium_estimate,
                                const std::optional<CutPlane>& pubis_estimate,
                                const LabelMap& pelvis_labels) {
  CutPlaneSet cuts = planned;
  if (ilium_estimate) {
    cuts[CutName::ilium] = align_to(*ilium_estimate, planned[CutName::ilium]);
  }
  if (pubis_estimate) {
    cuts[CutName::pubis] = align_to(*pubis_estimate, planned[CutName::pubis]);
  }
  return chisel_fragment_labels(pelvis_labels, cuts);
}

CutPlane transform_plane(const CutPlane& plane, const RigidPose& g) {
  return {g.rotate(plane.normal), g.apply(plane.point)};
}

}  // namespace fragreg
