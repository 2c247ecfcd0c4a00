// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/pipeline.hpp"

#include "fragreg/random.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace fragreg {

namespace {

Vec6 make6(double a, double b, double c, double d, double e, double f) {
  Vec6 v;
  v << a, b, c, d, e, f;
  return v;
}

Twist twist_from_deg_mm(const Eigen::VectorXd& x, int offset = 0) {
  Twist t;
  t.rot = deg2rad(1.0) * Vec3(x[offset], x[offset + 1], x[offset + 2]);
  t.trans = Vec3(x[offset + 3], x[offset + 4], x[offset + 5]);
  return t;
}

// Candidate pose for a twist x about the intermediate frame F:
// F * exp(x) * F^-1 * reference.
RigidPose posed(const Eigen::VectorXd& x, const RigidPose& interm,
                const RigidPose& reference, int offset = 0) {
  return interm * se3_exp(twist_from_deg_mm(x, offset)) * interm.inverse() *
         reference;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

RegistrationConfig RegistrationConfig::defaults() {
  RegistrationConfig cfg;
  cfg.patch.patch_diameter_full_res = 83;

  cfg.landmark_init.cmaes = CmaesConfig::make(100, make6(15, 15, 30, 50, 50, 100));
  cfg.landmark_init.regularizer.mode = RegularizerMode::per_component_normal;
  cfg.landmark_init.regularizer.component_sigma = make6(10, 10, 10, 20, 20, 100);
  cfg.landmark_init.bobyqa_box = make6(7.5, 7.5, 15, 25, 25, 50);

  cfg.rotation_init.cmaes = CmaesConfig::make(20, make6(2.5, 2.5, 5, 2.5, 2.5, 2.5));
  cfg.rotation_init.regularizer.mode = RegularizerMode::per_component_normal;
  cfg.rotation_init.regularizer.component_sigma = make6(2.5, 2.5, 2.5, 2.5, 2.5, 25);
  cfg.rotation_init.bobyqa_box = make6(1.25, 1.25, 1.25, 1.25, 1.25, 12.5);

  cfg.pelvis.cmaes = CmaesConfig::make(20, make6(2.3, 2.3, 2.3, 2, 2, 2));
  cfg.pelvis.folded.mode = RegularizerMode::folded_normal_magnitude;
  cfg.pelvis.folded.folded_rot_mu_deg = 2.5;
  cfg.pelvis.folded.folded_trans_mu_mm = 2.5;
  cfg.pelvis.seq_box = make6(2.5, 2.5, 2.5, 5, 5, 5);
  cfg.pelvis.simult_box = make6(2.5, 2.5, 2.5, 5, 5, 5);

  cfg.femur.cmaes = CmaesConfig::make(100, make6(17.2, 17.2, 17.2, 5, 5, 5));
  cfg.femur.folded.mode = RegularizerMode::folded_normal_magnitude;
  cfg.femur.folded.folded_rot_mu_deg = 10.0;
  cfg.femur.folded.folded_trans_mu_mm = 10.0;
  cfg.femur.seq_box = make6(10, 10, 10, 30, 30, 30);
  cfg.femur.simult_box = make6(2.5, 2.5, 2.5, 10, 10, 10);

  cfg.fragment = cfg.femur;
  return cfg;
}

RigidPose init_single_landmark(const Vec2& lm2d_px, const CameraGeometry& cam,
                               const AppFrame& app, const Vec3& lm3d_vol,
                               double depth_fraction) {
  const Vec3 ray = cam.detector_point_cam(lm2d_px.x(), lm2d_px.y()).normalized();
  const Vec3 landmark_cam = depth_fraction * cam.sdd * ray;

  RigidPose pose;
  // AP viewing convention: LR -> +x, IS -> +y, AP -> +z in camera axes.
  pose.R = app.pose.R.transpose();
  pose.t = landmark_cam - pose.R * lm3d_vol;
  return pose;
}

RigidPose register_single_view(const RadiographImage& image_full,
                               const CameraGeometry& intrinsics,
                               const Volume& object, const RigidPose& init,
                               SingleViewPhase phase,
                               const RegistrationConfig& cfg,
                               const Vec3& femoral_head_vol,
                               std::map<std::string, double>* scores) {
  const PhaseParams& params = phase == SingleViewPhase::landmark_init
                                  ? cfg.landmark_init
                                  : cfg.rotation_init;
  const char* tag =
      phase == SingleViewPhase::landmark_init ? "landmark-init" : "rotation-init";

  // Camera-axis-aligned intermediate frame at the femoral head estimate.
  RigidPose interm;
  interm.t = init.apply(femoral_head_vol);

  // Coarse level: CMA-ES with per-component normal regularization.
  RigidPose current = init;
  {
    CameraGeometry cam = intrinsics.downsampled(cfg.coarse_downsample);
    cam.extrinsic = RigidPose::identity();
    PatchSimilarityConfig patch = cfg.patch;
    patch.downsample_factor = cfg.coarse_downsample;
    const RadiographImage fixed = downsample(image_full, cfg.coarse_downsample);
    const PatchGradNccScorer scorer(fixed, patch);

    auto similarity = [&](const Eigen::VectorXd& x) {
      const RigidPose pose = posed(x, interm, current);
      return scorer.score(cast_drr({{&object, pose}}, cam, 1));
    };
    CmaesConfig cmaes = params.cmaes;
    cmaes.seed = mix_seed(cfg.seed, 0x51, static_cast<std::uint64_t>(phase));
    const OptimResult res =
        cmaes_minimize(make_regularized_objective(similarity, params.regularizer),
                       Vec6::Zero(), cmaes);
    current = posed(res.x, interm, current);
    if (scores) (*scores)[std::string(tag) + "-cmaes"] = res.f;
  }

  // Fine level: box-constrained refinement about the coarse estimate.
  {
    CameraGeometry cam = intrinsics.downsampled(cfg.fine_downsample);
    cam.extrinsic = RigidPose::identity();
    PatchSimilarityConfig patch = cfg.patch;
    patch.downsample_factor = cfg.fine_downsample;
    const RadiographImage fixed = downsample(image_full, cfg.fine_downsample);
    const PatchGradNccScorer scorer(fixed, patch);

    auto similarity = [&](const Eigen::VectorXd& x) {
      const RigidPose pose = posed(x, interm, current);
      return scorer.score(cast_drr({{&object, pose}}, cam, 1));
    };
    const BoxConstraints box =
        BoxConstraints::around(Vec6::Zero(), params.bobyqa_box);
    const OptimResult res = bobyqa_minimize(similarity, Vec6::Zero(), box);
    current = posed(res.x, interm, current);
    if (scores) (*scores)[std::string(tag) + "-bobyqa"] = res.f;
  }
  return current;
}

OrbitalSearchResult orbital_exhaustive_init(
    const RadiographImage& image_full, const CameraGeometry& intrinsics,
    const RigidPose& registered_first, const OrbitGeometry& orbit,
    const Volume& pelvis, const RegistrationConfig& cfg,
    const Vec3& femoral_head_vol) {
  CameraGeometry cam = intrinsics.downsampled(cfg.coarse_downsample);
  cam.extrinsic = RigidPose::identity();
  PatchSimilarityConfig patch = cfg.patch;
  patch.downsample_factor = cfg.coarse_downsample;
  const RadiographImage fixed = downsample(image_full, cfg.coarse_downsample);
  const PatchGradNccScorer scorer(fixed, patch);

  const Vec3 axis = orbit.axis_cam.normalized();

  OrbitalSearchResult result;
  double best_score = std::numeric_limits<double>::infinity();
  for (int a = -cfg.orbital_half_range_deg; a <= cfg.orbital_half_range_deg; ++a) {
    // Camera assembly rotated by `a` about the orbit: coordinates of a
    // patient-fixed point transform by the inverse motion.
    RigidPose g;
    g.R = rot_axis_angle(axis, deg2rad(double(a)));
    g.t = orbit.isocenter_cam - g.R * orbit.isocenter_cam;
    const RigidPose candidate = g.inverse() * registered_first;
    const double score = scorer.score(cast_drr({{&pelvis, candidate}}, cam, 1));
    ++result.candidates;
    if (score < best_score) {
      best_score = score;
      result.best_angle_deg = a;
      result.coarse_pose = candidate;
    }
  }

  result.pose = register_single_view(image_full, intrinsics, pelvis,
                                     result.coarse_pose,
                                     SingleViewPhase::rotation_init, cfg,
                                     femoral_head_vol);
  return result;
}

namespace {

// Shared state for the multi-view multi-object phases: per-view scorers and
// cached composite DRRs of the objects that are not being optimized.
struct MultiViewState {
  std::vector<CameraGeometry> cams;  // extrinsic = pelvis-volume -> camera m
  std::vector<PatchGradNccScorer> scorers;
  std::vector<const Volume*> volumes;  // per object
  std::vector<RigidPose> poses;        // per object, volume-frame adjustment
  std::vector<RadiographImage> static_cache;  // per view

  int n_views() const { return static_cast<int>(cams.size()); }
  int n_objects() const { return static_cast<int>(volumes.size()); }

  void rebuild_cache(int moving) {
    static_cache.clear();
    for (int m = 0; m < n_views(); ++m) {
      std::vector<PosedObject> fixed_objects;
      for (int o = 0; o < n_objects(); ++o) {
        if (o != moving) fixed_objects.push_back({volumes[o], poses[o]});
      }
      if (fixed_objects.empty()) {
        RadiographImage zero = RadiographImage::make(ImageKind::line_integral,
                                                     cams[m]);
        static_cache.push_back(std::move(zero));
      } else {
        static_cache.push_back(cast_drr(fixed_objects, cams[m], 1));
      }
    }
  }

  // Sum of per-view scores with object `moving` at `pose`, other objects
  // taken from the cache.
  double score_moving(int moving, const RigidPose& pose) const {
    double total = 0;
    for (int m = 0; m < n_views(); ++m) {
      RadiographImage img = cast_drr({{volumes[moving], pose}}, cams[m], 1);
      for (std::size_t i = 0; i < img.px.size(); ++i) {
        img.px[i] += static_cache[m].px[i];
      }
      total += scorers[m].score(img);
    }
    return total;
  }

  // Sum of per-view scores with every object re-rendered at the given poses.
  double score_all(const std::vector<RigidPose>& all_poses) const {
    double total = 0;
    for (int m = 0; m < n_views(); ++m) {
      std::vector<PosedObject> objs;
      for (int o = 0; o < n_objects(); ++o) {
        objs.push_back({volumes[o], all_poses[o]});
      }
      total += scorers[m].score(cast_drr(objs, cams[m], 1));
    }
    return total;
  }
};

MultiViewState make_state(const ViewSet& views,
                          const std::vector<RigidPose>& view_poses,
                          const std::vector<const Volume*>& volumes,
                          const RegistrationConfig& cfg, int downsample_factor) {
  MultiViewState st;
  PatchSimilarityConfig patch = cfg.patch;
  patch.downsample_factor = downsample_factor;
  for (std::size_t m = 0; m < views.views.size(); ++m) {
    CameraGeometry cam = views.views[m].intrinsics.downsampled(downsample_factor);
    cam.extrinsic = view_poses[m];
    st.cams.push_back(cam);
    st.scorers.emplace_back(downsample(views.views[m].image, downsample_factor),
                            patch);
  }
  st.volumes = volumes;
  return st;
}

}  // namespace

RegistrationResult register_multiview_multiobject(
    const ViewSet& views, const std::vector<RigidPose>& view_poses,
    const ObjectModels& objects, const AppFrame& app,
    const RegistrationConfig& cfg) {
  if (views.views.size() != view_poses.size() || views.views.empty()) {
    throw std::invalid_argument(
        "register_multiview_multiobject: every view needs a pelvis pose");
  }

  RegistrationResult result;
  result.view_extrinsics = view_poses;

  const bool has_femur = objects.femur.has_value();
  std::vector<const Volume*> volumes{&objects.pelvis};
  std::vector<const MultiObjectParams*> params{&cfg.pelvis};
  if (has_femur) {
    volumes.push_back(&*objects.femur);
    params.push_back(&cfg.femur);
  }
  volumes.push_back(&objects.fragment);
  params.push_back(&cfg.fragment);
  const int n_obj = static_cast<int>(volumes.size());

  // Optimization twist referenced in the APP frame at the femoral head.
  const RigidPose interm = app.pose;
  std::vector<RigidPose> poses(n_obj, RigidPose::identity());

  // Coarse level: sequential CMA-ES, one object at a time; femur and
  // fragment start from the pelvis estimate.
  {
    MultiViewState st = make_state(views, view_poses, volumes, cfg,
                                   cfg.coarse_downsample);
    for (int o = 0; o < n_obj; ++o) {
      Stopwatch timer;
      if (o > 0) poses[o] = poses[0];
      st.poses = poses;
      st.rebuild_cache(o);
      auto similarity = [&](const Eigen::VectorXd& x) {
        return st.score_moving(o, posed(x, interm, poses[o]));
      };
      CmaesConfig cmaes = params[o]->cmaes;
      cmaes.seed = mix_seed(cfg.seed, 0xc0a, static_cast<std::uint64_t>(o));
      const OptimResult res = cmaes_minimize(
          make_regularized_objective(similarity, params[o]->folded), Vec6::Zero(),
          cmaes);
      poses[o] = posed(res.x, interm, poses[o]);
      const std::string tag = std::string("mv-cmaes-") + std::to_string(o);
      result.phase_scores[tag] = res.f;
      result.phase_seconds[tag] = timer.seconds();
    }
  }

  // Fine level: sequential bounded refinement, then a simultaneous
  // refinement over all object poses.
  {
    MultiViewState st =
        make_state(views, view_poses, volumes, cfg, cfg.fine_downsample);
    for (int o = 0; o < n_obj; ++o) {
      Stopwatch timer;
      st.poses = poses;
      st.rebuild_cache(o);
      auto similarity = [&](const Eigen::VectorXd& x) {
        return st.score_moving(o, posed(x, interm, poses[o]));
      };
      const BoxConstraints box =
          BoxConstraints::around(Vec6::Zero(), params[o]->seq_box);
      const OptimResult res = bobyqa_minimize(similarity, Vec6::Zero(), box);
      poses[o] = posed(res.x, interm, poses[o]);
      const std::string tag = std::string("mv-bobyqa-") + std::to_string(o);
      result.phase_scores[tag] = res.f;
      result.phase_seconds[tag] = timer.seconds();
    }

    {
      Stopwatch timer;
      auto similarity = [&](const Eigen::VectorXd& x) {
        std::vector<RigidPose> all(n_obj);
        for (int o = 0; o < n_obj; ++o) {
          all[o] = posed(x, interm, poses[o], 6 * o);
        }
        return st.score_all(all);
      };
      Eigen::VectorXd half(6 * n_obj);
      for (int o = 0; o < n_obj; ++o) half.segment<6>(6 * o) = params[o]->simult_box;
      const BoxConstraints box =
          BoxConstraints::around(Eigen::VectorXd::Zero(6 * n_obj), half);
      const OptimResult res =
          bobyqa_minimize(similarity, Eigen::VectorXd::Zero(6 * n_obj), box);
      for (int o = 0; o < n_obj; ++o) {
        poses[o] = posed(res.x, interm, poses[o], 6 * o);
      }
      result.phase_scores["mv-simultaneous"] = res.f;
      result.phase_seconds["mv-simultaneous"] = timer.seconds();
    }
  }

  const RigidPose e1 = view_poses[0];
  const int frag_idx = n_obj - 1;
  result.t_c_pv = (e1 * poses[0]).inverse();
  result.t_c_fv = (e1 * poses[frag_idx]).inverse();
  result.t_c_femur = has_femur ? (e1 * poses[1]).inverse() : result.t_c_pv;
  result.delta_app = relative_pose_app(result.t_c_fv, result.t_c_pv, app.pose);
  return result;
}

RigidPose relative_pose_app(const RigidPose& t_c_fv, const RigidPose& t_c_pv,
                            const RigidPose& t_app_pv) {
  return t_app_pv.inverse() * t_c_fv * t_c_pv.inverse() * t_app_pv;
}

double compute_lce(const RimTrace& rim, const Vec3& head_center_vol,
                   const RigidPose& delta_app, const AppFrame& app, Side side) {
  if (rim.points.empty()) {
    throw std::invalid_argument("compute_lce: empty rim trace");
  }
  const RigidPose vol_to_app = app.pose.inverse();
  const Vec3 head_app = vol_to_app.apply(head_center_vol);
  const double s = side_sign(side);

  double best_lateral = -std::numeric_limits<double>::infinity();
  double best_superior = 0;
  for (const auto& p : rim.points) {
    const Vec3 q = delta_app.apply(vol_to_app.apply(p));
    const double lateral = s * (q.x() - head_app.x());
    const double superior = q.y() - head_app.y();
    if (lateral > best_lateral) {
      best_lateral = lateral;
      best_superior = superior;
    }
  }
  if (best_lateral <= 0) {
    throw std::runtime_error("compute_lce: rim entirely medial of the head center");
  }
  return rad2deg(std::atan2(best_lateral, best_superior));
}

}  // namespace fragreg
