// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/io_json.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <stdexcept>

namespace fragreg {

using nlohmann::json;

json pose_to_json(const RigidPose& pose) {
  const Mat4 m = pose.matrix();
  json rows = json::array();
  for (int r = 0; r < 4; ++r) {
    json row = json::array();
    for (int c = 0; c < 4; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

RigidPose pose_from_json(const json& j) {
  Mat4 m;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  RigidPose pose = RigidPose::from_matrix(m);
  if (!pose.is_valid(1e-6)) {
    throw std::runtime_error("pose JSON is not a rigid transform");
  }
  return pose;
}

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3_from_json(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

json vec6_to_json(const Vec6& v) {
  json a = json::array();
  for (int i = 0; i < 6; ++i) a.push_back(v[i]);
  return a;
}

Vec6 vec6_from_json(const json& j) {
  Vec6 v;
  for (int i = 0; i < 6; ++i) v[i] = j.at(i).get<double>();
  return v;
}

}  // namespace

json camera_to_json(const CameraGeometry& cam) {
  json j;
  j["image_size"] = {cam.cols, cam.rows};
  j["pixel_spacing_mm"] = cam.pixel_spacing;
  j["source_to_detector_mm"] = cam.sdd;
  j["principal_point_px"] = {cam.principal.x(), cam.principal.y()};
  j["extrinsic"] = pose_to_json(cam.extrinsic);
  return j;
}

CameraGeometry camera_from_json(const json& j) {
  CameraGeometry cam;
  cam.cols = j.at("image_size").at(0).get<int>();
  cam.rows = j.at("image_size").at(1).get<int>();
  cam.pixel_spacing = j.at("pixel_spacing_mm").get<double>();
  cam.sdd = j.at("source_to_detector_mm").get<double>();
  cam.principal = Vec2(j.at("principal_point_px").at(0).get<double>(),
                       j.at("principal_point_px").at(1).get<double>());
  if (j.contains("extrinsic")) cam.extrinsic = pose_from_json(j["extrinsic"]);
  cam.validate();
  return cam;
}

json plane_to_json(const CutPlane& plane) {
  json j;
  j["normal"] = vec3_to_json(plane.normal);
  j["point"] = vec3_to_json(plane.point);
  return j;
}

CutPlane plane_from_json(const json& j) {
  CutPlane p;
  p.normal = vec3_from_json(j.at("normal")).normalized();
  p.point = vec3_from_json(j.at("point"));
  return p;
}

json cut_plane_set_to_json(const CutPlaneSet& cuts) {
  json j;
  for (CutName c : {CutName::ilium, CutName::pubis, CutName::ischium,
                    CutName::posterior}) {
    j[cut_name_str(c)] = plane_to_json(cuts[c]);
  }
  return j;
}

CutPlaneSet cut_plane_set_from_json(const json& j) {
  CutPlaneSet cuts;
  for (CutName c : {CutName::ilium, CutName::pubis, CutName::ischium,
                    CutName::posterior}) {
    cuts[c] = plane_from_json(j.at(cut_name_str(c)));
  }
  return cuts;
}

json annotation_to_json(const CutAnnotation2D& ann) {
  json j;
  j["view-id"] = ann.view_id;
  j["cut-name"] = cut_name_str(ann.cut);
  json px = json::array();
  for (const auto& p : ann.pixels) {
    px.push_back({p.u, p.v, static_cast<int>(p.kind)});
  }
  j["pixels"] = px;
  return j;
}

CutAnnotation2D annotation_from_json(const json& j) {
  CutAnnotation2D ann;
  ann.view_id = j.at("view-id").get<int>();
  ann.cut = cut_name_from_str(j.at("cut-name").get<std::string>());
  for (const auto& p : j.at("pixels")) {
    CutPixel px;
    px.u = p.at(0).get<double>();
    px.v = p.at(1).get<double>();
    const int kind = p.at(2).get<int>();
    if (kind < 0 || kind > 2) throw std::runtime_error("bad cut pixel label code");
    px.kind = static_cast<CutPixelKind>(kind);
    ann.pixels.push_back(px);
  }
  return ann;
}

namespace {

json cmaes_to_json(const CmaesConfig& c) {
  json j;
  j["population"] = c.population;
  j["sigma"] = vec6_to_json(c.initial_sigma);
  j["max_iterations"] = c.max_iterations;
  j["tolerance"] = c.tolerance;
  return j;
}

CmaesConfig cmaes_from_json(const json& j, const CmaesConfig& defaults) {
  CmaesConfig c = defaults;
  if (j.contains("population")) c.population = j["population"].get<int>();
  if (j.contains("sigma")) c.initial_sigma = vec6_from_json(j["sigma"]);
  if (j.contains("max_iterations")) c.max_iterations = j["max_iterations"].get<int>();
  if (j.contains("tolerance")) c.tolerance = j["tolerance"].get<double>();
  return c;
}

json phase_to_json(const PhaseParams& p) {
  json j;
  j["cmaes"] = cmaes_to_json(p.cmaes);
  j["regularizer_sigma"] = vec6_to_json(p.regularizer.component_sigma);
  j["bobyqa_box"] = vec6_to_json(p.bobyqa_box);
  return j;
}

PhaseParams phase_from_json(const json& j, const PhaseParams& defaults) {
  PhaseParams p = defaults;
  if (j.contains("cmaes")) p.cmaes = cmaes_from_json(j["cmaes"], defaults.cmaes);
  if (j.contains("regularizer_sigma")) {
    p.regularizer.component_sigma = vec6_from_json(j["regularizer_sigma"]);
  }
  if (j.contains("bobyqa_box")) p.bobyqa_box = vec6_from_json(j["bobyqa_box"]);
  return p;
}

json multi_to_json(const MultiObjectParams& p) {
  json j;
  j["cmaes"] = cmaes_to_json(p.cmaes);
  j["folded_normal"] = {{"rotation_mu_deg", p.folded.folded_rot_mu_deg},
                        {"translation_mu_mm", p.folded.folded_trans_mu_mm}};
  j["sequential_box"] = vec6_to_json(p.seq_box);
  j["simultaneous_box"] = vec6_to_json(p.simult_box);
  return j;
}

MultiObjectParams multi_from_json(const json& j, const MultiObjectParams& defaults) {
  MultiObjectParams p = defaults;
  if (j.contains("cmaes")) p.cmaes = cmaes_from_json(j["cmaes"], defaults.cmaes);
  if (j.contains("folded_normal")) {
    const auto& f = j["folded_normal"];
    if (f.contains("rotation_mu_deg")) {
      p.folded.folded_rot_mu_deg = f["rotation_mu_deg"].get<double>();
    }
    if (f.contains("translation_mu_mm")) {
      p.folded.folded_trans_mu_mm = f["translation_mu_mm"].get<double>();
    }
  }
  if (j.contains("sequential_box")) p.seq_box = vec6_from_json(j["sequential_box"]);
  if (j.contains("simultaneous_box")) {
    p.simult_box = vec6_from_json(j["simultaneous_box"]);
  }
  return p;
}

}  // namespace

json registration_config_to_json(const RegistrationConfig& cfg) {
  json j;
  j["coarse_downsample"] = cfg.coarse_downsample;
  j["fine_downsample"] = cfg.fine_downsample;
  j["patch_diameter_px"] = cfg.patch.patch_diameter_full_res;
  j["orbital_half_range_deg"] = cfg.orbital_half_range_deg;
  j["landmark_depth_fraction"] = cfg.landmark_depth_fraction;
  j["single_view"] = {{"landmark_init", phase_to_json(cfg.landmark_init)},
                      {"rotation_init", phase_to_json(cfg.rotation_init)}};
  j["multi_view"] = {{"pelvis", multi_to_json(cfg.pelvis)},
                     {"femur", multi_to_json(cfg.femur)},
                     {"fragment", multi_to_json(cfg.fragment)}};
  j["weights"] = {{"similarity", 0.9}, {"regularizer", 0.1}};
  return j;
}

RegistrationConfig registration_config_from_json(const json& j) {
  RegistrationConfig cfg = RegistrationConfig::defaults();
  if (j.contains("coarse_downsample")) {
    cfg.coarse_downsample = j["coarse_downsample"].get<int>();
  }
  if (j.contains("fine_downsample")) {
    cfg.fine_downsample = j["fine_downsample"].get<int>();
  }
  if (j.contains("patch_diameter_px")) {
    cfg.patch.patch_diameter_full_res = j["patch_diameter_px"].get<int>();
  }
  if (j.contains("orbital_half_range_deg")) {
    cfg.orbital_half_range_deg = j["orbital_half_range_deg"].get<int>();
  }
  if (j.contains("landmark_depth_fraction")) {
    cfg.landmark_depth_fraction = j["landmark_depth_fraction"].get<double>();
  }
  if (j.contains("single_view")) {
    const auto& sv = j["single_view"];
    if (sv.contains("landmark_init")) {
      cfg.landmark_init = phase_from_json(sv["landmark_init"], cfg.landmark_init);
    }
    if (sv.contains("rotation_init")) {
      cfg.rotation_init = phase_from_json(sv["rotation_init"], cfg.rotation_init);
    }
  }
  if (j.contains("multi_view")) {
    const auto& mv = j["multi_view"];
    if (mv.contains("pelvis")) cfg.pelvis = multi_from_json(mv["pelvis"], cfg.pelvis);
    if (mv.contains("femur")) cfg.femur = multi_from_json(mv["femur"], cfg.femur);
    if (mv.contains("fragment")) {
      cfg.fragment = multi_from_json(mv["fragment"], cfg.fragment);
    }
  }
  return cfg;
}

json registration_result_to_json(const RegistrationResult& result,
                                 double lce_deg) {
  json j;
  j["t_c_pv"] = pose_to_json(result.t_c_pv);
  j["t_c_fv"] = pose_to_json(result.t_c_fv);
  j["t_c_femur"] = pose_to_json(result.t_c_femur);
  j["delta_app"] = pose_to_json(result.delta_app);
  j["lce_deg"] = lce_deg;
  json ext = json::array();
  for (const auto& e : result.view_extrinsics) ext.push_back(pose_to_json(e));
  j["view_extrinsics"] = ext;
  j["phase_scores"] = result.phase_scores;
  j["phase_seconds"] = result.phase_seconds;
  return j;
}

json outcome_to_json(const TrialOutcome& o) {
  json j;
  j["trial_id"] = o.trial_id;
  j["mode"] = shape_mode_name(o.mode);
  j["failed"] = o.failed;
  j["outlier"] = o.outlier;
  if (o.failed) {
    j["error"] = o.error_message;
    return j;
  }
  j["rotation_deg"] = {{"total", o.pose_error.rot_total_deg},
                       {"lr", o.pose_error.rot_axis_deg.x()},
                       {"is", o.pose_error.rot_axis_deg.y()},
                       {"ap", o.pose_error.rot_axis_deg.z()}};
  j["translation_mm"] = {{"total", o.pose_error.trans_total_mm},
                         {"lr", o.pose_error.trans_axis_mm.x()},
                         {"is", o.pose_error.trans_axis_mm.y()},
                         {"ap", o.pose_error.trans_axis_mm.z()}};
  j["lce_error_deg"] = o.lce_error_deg;
  j["phase_seconds"] = o.phase_seconds;
  return j;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["n_trials"] = cfg.n_trials;
  j["n_inits"] = cfg.n_inits;
  json modes = json::array();
  for (ShapeMode m : cfg.modes) modes.push_back(shape_mode_name(m));
  j["modes"] = modes;
  j["thresholds_deg"] = cfg.thresholds_deg;
  j["outlier_rot_deg"] = cfg.outlier_rot_deg;
  j["exclude_outliers"] = cfg.exclude_outliers;
  j["side"] = side_name(cfg.side);
  j["photons"] = cfg.trial.photons;
  j["registration"] = registration_config_to_json(cfg.registration);
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("n_trials")) cfg.n_trials = j["n_trials"].get<int>();
  if (j.contains("n_inits")) cfg.n_inits = j["n_inits"].get<int>();
  if (j.contains("modes")) {
    cfg.modes.clear();
    for (const auto& m : j["modes"]) {
      cfg.modes.push_back(shape_mode_from_name(m.get<std::string>()));
    }
  }
  if (j.contains("thresholds_deg")) {
    cfg.thresholds_deg = j["thresholds_deg"].get<std::vector<double>>();
  }
  if (j.contains("outlier_rot_deg")) {
    cfg.outlier_rot_deg = j["outlier_rot_deg"].get<double>();
  }
  if (j.contains("exclude_outliers")) {
    cfg.exclude_outliers = j["exclude_outliers"].get<bool>();
  }
  if (j.contains("side")) cfg.side = side_from_name(j["side"].get<std::string>());
  if (j.contains("photons")) cfg.trial.photons = j["photons"].get<std::int64_t>();
  if (j.contains("registration")) {
    cfg.registration = registration_config_from_json(j["registration"]);
  }
  return cfg;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

}  // namespace fragreg
