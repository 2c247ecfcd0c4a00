// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Evaluation metrics, aggregation statistics, and experiment orchestration.

#pragma once

#include "fragreg/pipeline.hpp"
#include "fragreg/simstudy.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fragreg {

enum class ShapeMode {
  all_cuts_known,
  no_cuts_known,
  ilium_pubis_known,
  ilium_pubis_estimated,
};
const char* shape_mode_name(ShapeMode m);
ShapeMode shape_mode_from_name(const std::string& s);

struct TrialOutcome {
  int trial_id = 0;
  ShapeMode mode = ShapeMode::all_cuts_known;
  PoseError pose_error;
  double lce_error_deg = 0;
  std::map<std::string, double> phase_seconds;
  bool failed = false;
  bool outlier = false;  // rotation error above the outlier threshold
  std::string error_message;
};

// Ground-truth relative pose for a simulated movement, computed through the
// same transform composition the registration output uses.
RigidPose ground_truth_delta_app(const MovementSample& move, const AppFrame& app);

// Pose error via the APP-frame decomposition of est vs gt deltas; LCE error
// as the absolute difference of the LCE angles under the two deltas.
TrialOutcome evaluate_trial(const RegistrationResult& result,
                            const MovementSample& gt_move, const RimTrace& rim,
                            const Vec3& head_center_vol, const AppFrame& app,
                            Side side);

struct AggregateColumn {
  double mean = 0;
  double stddev = 0;
};

struct AggregateRow {
  ShapeMode mode;
  int count = 0;
  AggregateColumn rot_total, rot_lr, rot_is, rot_ap;
  AggregateColumn trans_total, trans_lr, trans_is, trans_ap;
  AggregateColumn lce;
  // threshold (deg) -> fraction of trials with rotation error strictly below
  std::map<double, double> rot_below;
  std::map<double, double> lce_below;
};

struct Summary {
  std::vector<AggregateRow> rows;
  int failed = 0;
  int outliers = 0;
};

// Per-mode mean +/- std over every error column plus strict-less-than
// threshold fractions. Failed trials are skipped; outliers are excluded
// only when exclude_outliers is set. Throws on an empty outcome list.
Summary aggregate(const std::vector<TrialOutcome>& outcomes,
                  const std::vector<double>& thresholds_deg,
                  bool exclude_outliers = false);

void write_summary_csv(const Summary& summary, const std::string& path);

struct MannWhitneyResult {
  double u = 0;  // U statistic of sample a
  double p = 0;  // one-tailed, alternative: b stochastically greater
  bool exact = false;
};

// Rank-based U with midrank tie handling. Exact enumeration (count of
// arrangements with U <= u_obs) when both samples are small and tie-free;
// otherwise the normal approximation with tie correction and continuity
// correction.
MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b);

struct ExperimentConfig {
  std::uint64_t seed = 2026;
  int n_trials = 20;
  int n_inits = 1;  // registration initializations per trial
  std::vector<ShapeMode> modes{ShapeMode::all_cuts_known};
  std::vector<double> thresholds_deg{3.0};
  double outlier_rot_deg = 20.0;
  bool exclude_outliers = false;
  Side side = Side::left;
  std::string out_dir;
  TrialOptions trial;
  RegistrationConfig registration = RegistrationConfig::defaults();
};

struct ExperimentReport {
  ExperimentConfig config;
  std::uint64_t config_hash = 0;
  std::vector<TrialOutcome> outcomes;
  Summary summary;
};

// simulate -> register (per shape mode, per initialization) -> evaluate ->
// aggregate. Failed trials are recorded and the run continues. When
// config.out_dir is set, per-trial JSON and the summary CSV/JSON are
// written there.
ExperimentReport run_experiment(const ExperimentConfig& config);

std::uint64_t experiment_config_hash(const ExperimentConfig& config);

}  // namespace fragreg
