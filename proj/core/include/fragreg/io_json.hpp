// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// JSON (de)serialization: poses as 4x4 row-major arrays, camera geometry,
// cut planes and annotations, optimizer configuration tables, registration
// results, and trial outcomes.

#pragma once

#include "fragreg/harness.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace fragreg {

nlohmann::json pose_to_json(const RigidPose& pose);       // 4x4 row-major
RigidPose pose_from_json(const nlohmann::json& j);

nlohmann::json camera_to_json(const CameraGeometry& cam);
CameraGeometry camera_from_json(const nlohmann::json& j);

nlohmann::json plane_to_json(const CutPlane& plane);
CutPlane plane_from_json(const nlohmann::json& j);

nlohmann::json cut_plane_set_to_json(const CutPlaneSet& cuts);
CutPlaneSet cut_plane_set_from_json(const nlohmann::json& j);

nlohmann::json annotation_to_json(const CutAnnotation2D& ann);
CutAnnotation2D annotation_from_json(const nlohmann::json& j);

nlohmann::json registration_config_to_json(const RegistrationConfig& cfg);
RegistrationConfig registration_config_from_json(const nlohmann::json& j);

nlohmann::json registration_result_to_json(const RegistrationResult& result,
                                           double lce_deg);

nlohmann::json outcome_to_json(const TrialOutcome& outcome);

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

void write_json_file(const nlohmann::json& j, const std::string& path);
nlohmann::json read_json_file(const std::string& path);

}  // namespace fragreg
