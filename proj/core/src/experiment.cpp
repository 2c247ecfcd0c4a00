// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/harness.hpp"
#include "fragreg/io_json.hpp"
#include "fragreg/random.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fragreg {

namespace {

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

// Registers one simulated trial end to end for one fragment-shape mode.
struct TrialContext {
  const Phantom& phantom;
  const AppFrame& app;
  const Volume& preop_att;
  const TrialRecord& record;
  const ExperimentConfig& config;

  ViewSet views;
  std::vector<RigidPose> view_poses;  // pelvis volume -> camera, per view
  Volume full_pelvis_att;             // uncut pelvis model for the single-view stage
  std::map<std::string, double> shared_seconds;

  void run_single_view_stage(const SimulatedAnnotations& ann) {
    // Log-correct the measured images once.
    views.views.clear();
    for (int v = 0; v < 3; ++v) {
      ViewData vd;
      vd.image = log_correct(record.intensity_images[v], kPhotonCountDefault);
      vd.intrinsics = record.view_geometry[v];
      vd.intrinsics.extrinsic = RigidPose::identity();  // unknown a priori
      views.views.push_back(std::move(vd));
    }

    RegistrationConfig reg = config.registration;

    Stopwatch sw_init;
    const Vec2 mof_px = ann.noisy_landmarks_2d[0].p2("mof");
    const Vec3 mof_3d = ann.noisy_landmarks.p3("mof");
    const RigidPose init =
        init_single_landmark(mof_px, views.views[0].intrinsics, app, mof_3d,
                             reg.landmark_depth_fraction);
    shared_seconds["init"] = sw_init.seconds();

    Stopwatch sw_first;
    const Vec3 head = app.femoral_head;
    view_poses.assign(3, RigidPose::identity());
    view_poses[0] = register_single_view(views.views[0].image,
                                         views.views[0].intrinsics,
                                         full_pelvis_att, init,
                                         SingleViewPhase::landmark_init, reg, head);
    shared_seconds["first-view"] = sw_first.seconds();

    Stopwatch sw_orbit;
    for (int v = 1; v < 3; ++v) {
      const OrbitalSearchResult orb = orbital_exhaustive_init(
          views.views[v].image, views.views[v].intrinsics, view_poses[0],
          record.orbit_in_view1, full_pelvis_att, reg, head);
      view_poses[v] = orb.pose;
    }
    shared_seconds["orbital-views"] = sw_orbit.seconds();
  }

  LabelMap labels_for_mode(ShapeMode mode, double* est_seconds) {
    switch (mode) {
      case ShapeMode::all_cuts_known:
        return record.labels_true_fragment;
      case ShapeMode::no_cuts_known:
        return chisel_fragment_labels(phantom.labels, record.nominal_cuts);
      case ShapeMode::ilium_pubis_known: {
        CutPlaneSet cuts = record.nominal_cuts;
        cuts[CutName::ilium] = record.true_cuts[CutName::ilium];
        cuts[CutName::pubis] = record.true_cuts[CutName::pubis];
        return chisel_fragment_labels(phantom.labels, cuts);
      }
      case ShapeMode::ilium_pubis_estimated: {
        Stopwatch sw;
        const LabelMap out = estimate_fragment_labels();
        if (est_seconds) *est_seconds = sw.seconds();
        return out;
      }
    }
    throw std::logic_error("unknown shape mode");
  }

  LabelMap estimate_fragment_labels() {
    // Reconstruct 3D cut points from the 2D annotations through the
    // registered full pelvis, prune + RANSAC in APP axes, then re-chisel.
    const Volume bone_mask =
        mask_volume(phantom.labels, [](Label l) { return l == Label::pelvis; });
    const RigidPose vol_to_app = app.pose.inverse();
    const Vec3 head_app = vol_to_app.apply(app.femoral_head);

    std::optional<CutPlane> ilium, pubis;
    for (CutName cut : {CutName::ilium, CutName::pubis}) {
      std::vector<Vec3> pts_app;
      for (const auto& ann : record.annotations.annotations) {
        if (ann.cut != cut) continue;
        CameraGeometry cam = record.view_geometry[ann.view_id];
        cam.extrinsic = RigidPose::identity();
        const auto pts = cut_annotations_to_3d(ann, cam,
                                               view_poses[ann.view_id], bone_mask);
        for (const auto& p : pts) pts_app.push_back(vol_to_app.apply(p));
      }
      if (pts_app.size() < 3) continue;
      RansacPlaneOptions opts;
      opts.seed = mix_seed(record.seed, 0xf17, static_cast<std::uint64_t>(cut));
      try {
        const CutPlane plane_app =
            fit_cut_plane_ransac(pts_app, cut, head_app, phantom.side, opts);
        const CutPlane plane_vol = transform_plane(plane_app, app.pose);
        if (cut == CutName::ilium) ilium = plane_vol;
        else pubis = plane_vol;
      } catch (const std::exception&) {
        // Fall back to the planned cut when estimation fails.
      }
    }
    return rebuild_fragment_shape(record.nominal_cuts, ilium, pubis,
                                  phantom.labels);
  }

  TrialOutcome run_mode(ShapeMode mode) {
    TrialOutcome outcome;
    outcome.trial_id = record.trial_id;
    outcome.mode = mode;
    try {
      double est_seconds = 0;
      const LabelMap labels = labels_for_mode(mode, &est_seconds);

      ObjectModels models;
      models.pelvis =
          extract_tight_subvolume(preop_att, labels, Label::pelvis).volume;
      models.fragment =
          extract_tight_subvolume(preop_att, labels, Label::fragment).volume;
      models.femur =
          extract_tight_subvolume(preop_att, labels, femur_label(phantom.side))
              .volume;

      RegistrationConfig reg = config.registration;
      reg.seed = mix_seed(config.seed, record.trial_id,
                          static_cast<std::uint64_t>(mode));

      Stopwatch sw;
      const RegistrationResult result = register_multiview_multiobject(
          views, view_poses, models, app, reg);
      const double mv_seconds = sw.seconds();

      outcome = evaluate_trial(result, record.movement, phantom.rim,
                               app.femoral_head, app, phantom.side);
      outcome.trial_id = record.trial_id;
      outcome.mode = mode;
      outcome.phase_seconds = result.phase_seconds;
      outcome.phase_seconds["multiview-total"] = mv_seconds;
      outcome.phase_seconds["shape-estimation"] = est_seconds;
      for (const auto& [k, v] : shared_seconds) outcome.phase_seconds[k] = v;
      outcome.outlier =
          outcome.pose_error.rot_total_deg > config.outlier_rot_deg;
    } catch (const std::exception& e) {
      outcome.failed = true;
      outcome.error_message = e.what();
    }
    return outcome;
  }
};

}  // namespace

std::uint64_t experiment_config_hash(const ExperimentConfig& config) {
  const std::string dump = experiment_config_to_json(config).dump();
  // FNV-1a.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  ExperimentReport report;
  report.config = config;
  report.config_hash = experiment_config_hash(config);

  const bool write_files = !config.out_dir.empty();
  if (write_files) {
    std::filesystem::create_directories(config.out_dir);
    nlohmann::json meta;
    meta["config"] = experiment_config_to_json(config);
    meta["config_hash"] = report.config_hash;
    write_json_file(meta, config.out_dir + "/config.json");
  }

  const Phantom phantom = generate_phantom(config.seed, config.side);
  const AppFrame app = build_app_frame(phantom.landmarks, phantom.side);
  const Volume preop_att = hu_to_attenuation(phantom.hu);
  const Volume full_pelvis_att = [&] {
    return extract_tight_subvolume(
               preop_att,
               phantom.labels, Label::pelvis)
        .volume;
  }();

  for (int t = 0; t < config.n_trials; ++t) {
    TrialRecord record;
    try {
      record = simulate_trial(phantom, t, mix_seed(config.seed, 0x7157, t),
                              config.trial);
    } catch (const std::exception& e) {
      TrialOutcome failed;
      failed.trial_id = t;
      failed.failed = true;
      failed.error_message = std::string("simulation: ") + e.what();
      report.outcomes.push_back(failed);
      continue;
    }

    for (int init = 0; init < config.n_inits; ++init) {
      SimulatedAnnotations ann = record.annotations;
      if (init > 0) {
        // Independent landmark/annotation noise per initialization; the
        // images themselves are unchanged.
        const LabelMap moved = build_moved_labels(record.labels_true_fragment,
                                                  record.movement, app);
        ann = simulate_annotations(phantom, record.true_cuts,
                                   record.labels_true_fragment, moved,
                                   record.view_geometry,
                                   mix_seed(record.seed, 0xa11, init),
                                   config.trial.annotation_noise);
      }

      TrialContext ctx{phantom, app, preop_att, record, config, {}, {},
                       full_pelvis_att, {}};
      bool stage_ok = true;
      try {
        ctx.run_single_view_stage(ann);
      } catch (const std::exception& e) {
        stage_ok = false;
        for (ShapeMode mode : config.modes) {
          TrialOutcome failed;
          failed.trial_id = t;
          failed.mode = mode;
          failed.failed = true;
          failed.error_message = std::string("single-view stage: ") + e.what();
          report.outcomes.push_back(failed);
        }
      }
      if (!stage_ok) continue;

      for (ShapeMode mode : config.modes) {
        TrialOutcome outcome = ctx.run_mode(mode);
        outcome.trial_id = t * config.n_inits + init;
        if (write_files) {
          write_json_file(outcome_to_json(outcome),
                          config.out_dir + "/trial_" + std::to_string(t) + "_init_" +
                              std::to_string(init) + "_" +
                              shape_mode_name(mode) + ".json");
        }
        report.outcomes.push_back(std::move(outcome));
      }
    }
  }

  report.summary =
      aggregate(report.outcomes, config.thresholds_deg, config.exclude_outliers);
  if (write_files) {
    write_summary_csv(report.summary, config.out_dir + "/summary.csv");
    nlohmann::json all = nlohmann::json::array();
    for (const auto& o : report.outcomes) all.push_back(outcome_to_json(o));
    write_json_file(all, config.out_dir + "/outcomes.json");
  }
  return report;
}

}  // namespace fragreg
