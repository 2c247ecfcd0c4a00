// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace fragreg {

void RegularizerConfig::validate() const {
  if ((component_sigma.array() <= 0).any()) {
    throw std::invalid_argument("regularizer: sigmas must be > 0");
  }
  if (folded_rot_mu_deg <= 0 || folded_trans_mu_mm <= 0) {
    throw std::invalid_argument("regularizer: folded-normal parameters must be > 0");
  }
  if (std::abs(similarity_weight + regularizer_weight - 1.0) > 1e-12) {
    throw std::invalid_argument("regularizer: weights must sum to 1");
  }
}

double folded_normal_neg_log_pdf(double y, double mu, double sigma) {
  const double a = (y - mu) / sigma;
  const double b = (y + mu) / sigma;
  // log-sum-exp of the two reflected normal terms.
  const double ea = -0.5 * a * a;
  const double eb = -0.5 * b * b;
  const double hi = std::max(ea, eb);
  const double log_pdf = hi + std::log(std::exp(ea - hi) + std::exp(eb - hi)) -
                         std::log(sigma * std::sqrt(2.0 * kPi));
  return -log_pdf;
}

double regularizer_eval(const Vec6& twist_deg_mm, const RegularizerConfig& cfg) {
  cfg.validate();
  if (cfg.mode == RegularizerMode::per_component_normal) {
    // Euler decomposition of the rotation part, then independent zero-mean
    // normals on each Euler angle and translation component.
    const Vec3 w_rad = deg2rad(1.0) * twist_deg_mm.head<3>();
    const Vec3 euler_deg = euler_xyz_extrinsic(so3_exp(w_rad)) * rad2deg(1.0);
    Vec6 e;
    e << euler_deg, twist_deg_mm.tail<3>();
    double nll = 0;
    for (int i = 0; i < 6; ++i) {
      const double s = cfg.component_sigma[i];
      nll += 0.5 * (e[i] / s) * (e[i] / s) + std::log(s * std::sqrt(2.0 * kPi));
    }
    return nll;
  }
  const double rot_mag = twist_deg_mm.head<3>().norm();
  const double trans_mag = twist_deg_mm.tail<3>().norm();
  return folded_normal_neg_log_pdf(rot_mag, cfg.folded_rot_mu_deg,
                                   cfg.folded_rot_mu_deg) +
         folded_normal_neg_log_pdf(trans_mag, cfg.folded_trans_mu_mm,
                                   cfg.folded_trans_mu_mm);
}

Objective make_regularized_objective(Objective similarity,
                                     const RegularizerConfig& cfg) {
  cfg.validate();
  const double pen0 = regularizer_eval(Vec6::Zero(), cfg);
  return [similarity = std::move(similarity), cfg, pen0](const Eigen::VectorXd& x) {
    const Vec6 t = x;
    return cfg.similarity_weight * similarity(x) +
           cfg.regularizer_weight * (regularizer_eval(t, cfg) - pen0);
  };
}

}  // namespace fragreg
