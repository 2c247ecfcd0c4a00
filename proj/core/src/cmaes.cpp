// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/optim.hpp"

#include "fragreg/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace fragreg {

CmaesConfig CmaesConfig::make(int population, const Eigen::VectorXd& sigma) {
  CmaesConfig cfg;
  cfg.population = population;
  cfg.initial_sigma = sigma;
  return cfg;
}

void CmaesConfig::validate(int n) const {
  if (population < 4) throw std::invalid_argument("CMA-ES population must be >= 4");
  if (initial_sigma.size() != n) {
    throw std::invalid_argument("CMA-ES initial sigma size mismatch");
  }
  if ((initial_sigma.array() <= 0).any()) {
    throw std::invalid_argument("CMA-ES initial sigma must be > 0");
  }
  if (max_iterations < 1) throw std::invalid_argument("CMA-ES max iterations < 1");
}

OptimResult cmaes_minimize(const Objective& f, const Eigen::VectorXd& x0,
                           const CmaesConfig& cfg, const Objective* penalty) {
  using Eigen::MatrixXd;
  using Eigen::VectorXd;

  const int n = static_cast<int>(x0.size());
  if (n < 1) throw std::invalid_argument("cmaes_minimize: empty problem");
  cfg.validate(n);

  // Work in coordinates scaled by the initial sigma so the sampler starts
  // isotropic; map back for every objective call.
  const VectorXd scale = cfg.initial_sigma;
  auto to_x = [&](const VectorXd& y) -> VectorXd {
    return x0 + scale.cwiseProduct(y);
  };
  auto eval = [&](const VectorXd& x) -> double {
    double v = f(x);
    if (penalty) v += (*penalty)(x);
    return v;
  };

  OptimResult best;
  best.x = x0;
  best.f = eval(x0);
  best.evaluations = 1;
  if (!std::isfinite(best.f)) {
    throw std::runtime_error("cmaes_minimize: objective non-finite at x0");
  }

  const int lambda = cfg.population;
  const int mu = lambda / 2;
  VectorXd weights(mu);
  for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mu_eff = 1.0 / weights.squaredNorm();

  const double cc = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
  const double cs = (mu_eff + 2.0) / (n + mu_eff + 5.0);
  const double c1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
  const double cmu = std::min(1.0 - c1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) /
                                            ((n + 2.0) * (n + 2.0) + mu_eff));
  const double damps =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + cs;
  const double chi_n =
      std::sqrt(double(n)) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  VectorXd mean = VectorXd::Zero(n);
  double sigma = 1.0;
  MatrixXd cov = MatrixXd::Identity(n, n);
  VectorXd ps = VectorXd::Zero(n), pc = VectorXd::Zero(n);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  MatrixXd zs(n, lambda), ys(n, lambda);
  std::vector<double> fitness(lambda);
  std::vector<int> order(lambda);

  for (int gen = 0; gen < cfg.max_iterations; ++gen) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    const VectorXd d = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    const MatrixXd& b = eig.eigenvectors();
    const MatrixXd bd = b * d.asDiagonal();

    for (int k = 0; k < lambda; ++k) {
      for (int i = 0; i < n; ++i) zs(i, k) = normal(rng);
      ys.col(k) = bd * zs.col(k);
    }

    auto eval_candidate = [&](std::int64_t k) {
      const double v = eval(to_x(mean + sigma * ys.col(k)));
      fitness[k] = std::isfinite(v) ? v : std::numeric_limits<double>::max();
    };
    if (cfg.parallel_candidates) {
      parallel_for(0, lambda, eval_candidate);
    } else {
      for (int k = 0; k < lambda; ++k) eval_candidate(k);
    }
    best.evaluations += lambda;

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int bb) { return fitness[a] < fitness[bb]; });

    if (fitness[order[0]] < best.f) {
      best.f = fitness[order[0]];
      best.x = to_x(mean + sigma * ys.col(order[0]));
    }

    VectorXd y_w = VectorXd::Zero(n);
    for (int i = 0; i < mu; ++i) y_w += weights[i] * ys.col(order[i]);
    mean += sigma * y_w;

    // Cumulation paths.
    const MatrixXd c_inv_sqrt = b * d.cwiseInverse().asDiagonal() * b.transpose();
    ps = (1.0 - cs) * ps + std::sqrt(cs * (2.0 - cs) * mu_eff) * (c_inv_sqrt * y_w);
    const double ps_norm = ps.norm();
    const bool hsig =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - cs, 2.0 * (gen + 1))) <
        (1.4 + 2.0 / (n + 1.0)) * chi_n;
    pc = (1.0 - cc) * pc +
         (hsig ? std::sqrt(cc * (2.0 - cc) * mu_eff) : 0.0) * y_w;

    MatrixXd rank_mu = MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i) {
      rank_mu += weights[i] * ys.col(order[i]) * ys.col(order[i]).transpose();
    }
    cov = (1.0 - c1 - cmu) * cov +
          c1 * (pc * pc.transpose() + (hsig ? 0.0 : cc * (2.0 - cc)) * cov) +
          cmu * rank_mu;
    cov = 0.5 * (cov + cov.transpose());

    sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1.0));
    best.iterations = gen + 1;

    if (sigma * d.maxCoeff() < cfg.tolerance) break;
    if (!std::isfinite(sigma) || sigma > 1e8) break;
  }

  return best;
}

}  // namespace fragreg
