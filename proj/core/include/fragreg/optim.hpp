// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT
//
// Derivative-free optimizers (CMA-ES and a bounded quadratic-model trust
// region method) plus the pose regularizers combined into the registration
// objective. Pose search variables are 6-vectors ordered
// (rot LR deg, rot IS deg, rot AP deg, trans mm x3) unless noted.

#pragma once

#include "fragreg/geom.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>

namespace fragreg {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct CmaesConfig {
  int population = 20;
  Eigen::VectorXd initial_sigma;  // per-component, same units as x
  int max_iterations = 150;
  double tolerance = 1e-4;  // step size threshold, fraction of initial sigma
  std::uint64_t seed = 0;
  bool parallel_candidates = false;

  static CmaesConfig make(int population, const Eigen::VectorXd& sigma);
  void validate(int n) const;
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0;
  int iterations = 0;
  int evaluations = 0;
};

// Standard (mu/mu_w, lambda)-CMA-ES. Deterministic given cfg.seed; never
// returns a candidate worse than the best evaluated. `penalty`, when given,
// is added to the objective value (callers pre-apply any weighting).
// Throws if the combined objective is non-finite at x0.
OptimResult cmaes_minimize(const Objective& f, const Eigen::VectorXd& x0,
                           const CmaesConfig& cfg,
                           const Objective* penalty = nullptr);

// Per-component +/- bounds about a center point.
struct BoxConstraints {
  Eigen::VectorXd center;
  Eigen::VectorXd half_width;  // > 0 componentwise

  static BoxConstraints around(const Eigen::VectorXd& center,
                               const Eigen::VectorXd& half_width);
  Eigen::VectorXd lower() const { return center - half_width; }
  Eigen::VectorXd upper() const { return center + half_width; }
  bool strictly_inside(const Eigen::VectorXd& x, double tol = 0.0) const;
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;
  void validate() const;
};

struct BobyqaOptions {
  int max_evaluations = 500;
  double rho_end = 1e-5;  // final trust-region resolution
};

// Bounded quadratic-approximation trust region search: a quadratic model
// with minimum-Frobenius-norm Hessian is interpolated through the evaluated
// points and minimized within the trust region intersected with the box.
// One objective evaluation per iteration. Throws if x0 is not strictly
// inside the box.
OptimResult bobyqa_minimize(const Objective& f, const Eigen::VectorXd& x0,
                            const BoxConstraints& box,
                            const BobyqaOptions& opts = {});

enum class RegularizerMode { per_component_normal, folded_normal_magnitude };

struct RegularizerConfig {
  RegularizerMode mode = RegularizerMode::per_component_normal;
  // per_component_normal: zero-mean normal sigma per component
  // (deg x3, mm x3).
  Vec6 component_sigma = Vec6::Ones();
  // folded_normal_magnitude: mu = sigma parameters on the total rotation
  // (deg) and translation (mm) magnitudes.
  double folded_rot_mu_deg = 10.0;
  double folded_trans_mu_mm = 10.0;
  double similarity_weight = 0.9;
  double regularizer_weight = 0.1;

  void validate() const;
};

// Negative log density of the configured pose prior at the twist offset
// (deg x3, mm x3). Per-component mode evaluates the extrinsic LR->IS->AP
// Euler decomposition of the rotation part; folded mode evaluates the
// rotation/translation magnitudes.
double regularizer_eval(const Vec6& twist_deg_mm, const RegularizerConfig& cfg);

// -ln of the folded-normal density with parameters (mu, sigma) at y >= 0.
double folded_normal_neg_log_pdf(double y, double mu, double sigma);

// Weighted objective with the penalty affinely normalized so it is 0 at a
// zero twist: w_s * similarity + w_r * (penalty(x) - penalty(0)).
Objective make_regularized_objective(Objective similarity,
                                     const RegularizerConfig& cfg);

}  // namespace fragreg
