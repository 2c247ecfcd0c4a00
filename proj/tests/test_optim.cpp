#include "fragreg/optim.hpp"

#include <doctest.h>

#include <cmath>

using namespace fragreg;

namespace {

Eigen::VectorXd constant_vec(int n, double v) {
  return Eigen::VectorXd::Constant(n, v);
}

}  // namespace

TEST_CASE("CMA-ES solves the 6-D sphere") {
  const Objective sphere = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  CmaesConfig cfg = CmaesConfig::make(20, constant_vec(6, 2.0));
  cfg.max_iterations = 200;
  cfg.tolerance = 1e-9;
  cfg.seed = 123;
  const OptimResult res = cmaes_minimize(sphere, constant_vec(6, 5.0), cfg);
  CHECK(res.x.norm() < 1e-6);
}

TEST_CASE("CMA-ES solves 2-D Rosenbrock") {
  const Objective rosen = [](const Eigen::VectorXd& x) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  CmaesConfig cfg = CmaesConfig::make(24, constant_vec(2, 0.5));
  cfg.max_iterations = 600;
  cfg.tolerance = 1e-10;
  cfg.seed = 7;
  const OptimResult res = cmaes_minimize(rosen, x0, cfg);
  CHECK(res.f < 1e-6);
}

TEST_CASE("CMA-ES on a constant objective returns the start") {
  const Objective flat = [](const Eigen::VectorXd&) { return 4.25; };
  CmaesConfig cfg = CmaesConfig::make(12, constant_vec(3, 1.0));
  cfg.max_iterations = 30;
  cfg.seed = 9;
  const OptimResult res = cmaes_minimize(flat, constant_vec(3, 2.0), cfg);
  CHECK(res.f == 4.25);
  CHECK((res.x - constant_vec(3, 2.0)).norm() < 1e-12);
}

TEST_CASE("CMA-ES is deterministic under a fixed seed") {
  const Objective f = [](const Eigen::VectorXd& x) {
    return (x.array() - 1.5).square().sum() + std::sin(x[0]);
  };
  CmaesConfig cfg = CmaesConfig::make(16, constant_vec(4, 1.0));
  cfg.seed = 31;
  cfg.max_iterations = 40;
  const OptimResult a = cmaes_minimize(f, constant_vec(4, 0.0), cfg);
  const OptimResult b = cmaes_minimize(f, constant_vec(4, 0.0), cfg);
  CHECK(a.x == b.x);
  CHECK(a.f == b.f);
}

TEST_CASE("CMA-ES never returns a candidate worse than the best evaluated") {
  double best_seen = std::numeric_limits<double>::infinity();
  const Objective f = [&best_seen](const Eigen::VectorXd& x) {
    const double v = (x.array() - 0.3).square().sum() * (1.0 + 0.3 * std::sin(40.0 * x[0]));
    best_seen = std::min(best_seen, v);
    return v;
  };
  CmaesConfig cfg = CmaesConfig::make(10, constant_vec(3, 1.0));
  cfg.seed = 5;
  cfg.max_iterations = 50;
  const OptimResult res = cmaes_minimize(f, constant_vec(3, 2.0), cfg);
  CHECK(res.f == best_seen);
}

TEST_CASE("CMA-ES rejects a non-finite start") {
  const Objective f = [](const Eigen::VectorXd& x) {
    return x[0] > 1.0 ? x.squaredNorm() : std::nan("");
  };
  CmaesConfig cfg = CmaesConfig::make(8, constant_vec(2, 1.0));
  CHECK_THROWS(cmaes_minimize(f, constant_vec(2, 0.0), cfg));
}

TEST_CASE("CMA-ES applies the additive penalty") {
  const Objective f = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  // A penalty pulling toward x = 2.
  const Objective pen = [](const Eigen::VectorXd& x) {
    return 50.0 * (x.array() - 2.0).square().sum();
  };
  CmaesConfig cfg = CmaesConfig::make(16, constant_vec(2, 1.0));
  cfg.seed = 2;
  cfg.max_iterations = 150;
  cfg.tolerance = 1e-8;
  const OptimResult res = cmaes_minimize(f, constant_vec(2, 0.0), cfg, &pen);
  // Combined minimum at 100/51 per component.
  CHECK((res.x - constant_vec(2, 100.0 / 51.0)).norm() < 1e-3);
}

TEST_CASE("bounded quadratic search recovers an interior minimum") {
  Eigen::MatrixXd h(3, 3);
  h << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  const Eigen::VectorXd target = Eigen::Vector3d(0.4, -0.3, 0.6);
  const Objective quad = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd d = x - target;
    return 0.5 * d.dot(h * d) + 7.0;
  };
  const BoxConstraints box =
      BoxConstraints::around(constant_vec(3, 0.0), constant_vec(3, 2.0));
  const OptimResult res = bobyqa_minimize(quad, constant_vec(3, 0.0), box);
  CHECK((res.x - target).norm() < 1e-6);
  CHECK(res.f == doctest::Approx(7.0).epsilon(1e-9));
}

TEST_CASE("bounded quadratic search respects the box exactly") {
  // Minimum outside the box: the solution must sit on the boundary with a
  // consistent projected gradient.
  Eigen::MatrixXd h(2, 2);
  h << 2, 0.3, 0.3, 1;
  const Eigen::VectorXd target = Eigen::Vector2d(3.0, -2.5);
  const Objective quad = [&](const Eigen::VectorXd& x) {
    const Eigen::VectorXd d = x - target;
    return 0.5 * d.dot(h * d);
  };
  const BoxConstraints box =
      BoxConstraints::around(constant_vec(2, 0.0), constant_vec(2, 1.0));
  const OptimResult res = bobyqa_minimize(quad, constant_vec(2, 0.0), box);

  CHECK(res.x[0] <= 1.0 + 1e-12);
  CHECK(res.x[1] >= -1.0 - 1e-12);
  CHECK(res.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(res.x[1] == doctest::Approx(-1.0).epsilon(1e-6));

  // Projected gradient: active components push outward, free ones vanish.
  const Eigen::VectorXd g = h * (res.x - target);
  for (int i = 0; i < 2; ++i) {
    if (std::abs(res.x[i] - box.upper()[i]) < 1e-9) CHECK(g[i] <= 1e-6);
    else if (std::abs(res.x[i] - box.lower()[i]) < 1e-9) CHECK(g[i] >= -1e-6);
    else CHECK(std::abs(g[i]) < 1e-6);
  }
}

TEST_CASE("tiny box returns approximately the start") {
  const Objective f = [](const Eigen::VectorXd& x) {
    return (x.array() - 5.0).square().sum();
  };
  const BoxConstraints box =
      BoxConstraints::around(constant_vec(3, 1.0), constant_vec(3, 1e-9));
  const OptimResult res = bobyqa_minimize(f, constant_vec(3, 1.0), box);
  CHECK((res.x - constant_vec(3, 1.0)).norm() < 1e-8);
}

TEST_CASE("bounded search rejects a start outside the box") {
  const Objective f = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  const BoxConstraints box =
      BoxConstraints::around(constant_vec(2, 0.0), constant_vec(2, 1.0));
  CHECK_THROWS(bobyqa_minimize(f, constant_vec(2, 3.0), box));
}

TEST_CASE("bounded search on Rosenbrock converges within budget") {
  const Objective rosen = [](const Eigen::VectorXd& x) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  const BoxConstraints box = BoxConstraints::around(x0, constant_vec(2, 4.0));
  BobyqaOptions opts;
  opts.max_evaluations = 500;
  const OptimResult res = bobyqa_minimize(rosen, x0, box, opts);
  CHECK(res.f < 1e-5);
  CHECK(res.evaluations <= 500);
}

TEST_CASE("folded normal penalty closed form") {
  // At y = 0 with mu = sigma the density is 2/(sigma sqrt(2 pi)) e^{-1/2}.
  for (double sigma : {1.0, 2.5, 10.0}) {
    const double expect =
        -std::log(2.0 / (sigma * std::sqrt(2.0 * kPi)) * std::exp(-0.5));
    CHECK(folded_normal_neg_log_pdf(0.0, sigma, sigma) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("regularizer modes") {
  SUBCASE("per-component normal attains its minimum at the zero twist") {
    RegularizerConfig cfg;
    cfg.mode = RegularizerMode::per_component_normal;
    cfg.component_sigma << 10, 10, 10, 20, 20, 100;
    const double at_zero = regularizer_eval(Vec6::Zero(), cfg);
    for (int i = 0; i < 6; ++i) {
      Vec6 t = Vec6::Zero();
      t[i] = 1.0;
      CHECK(regularizer_eval(t, cfg) > at_zero);
      t[i] = -2.0;
      CHECK(regularizer_eval(t, cfg) > at_zero);
    }
  }

  SUBCASE("per-component penalty is monotone in each component magnitude") {
    RegularizerConfig cfg;
    cfg.mode = RegularizerMode::per_component_normal;
    cfg.component_sigma << 5, 5, 5, 10, 10, 10;
    for (int i = 0; i < 6; ++i) {
      double prev = -1e300;
      for (double mag = 0; mag < 20; mag += 0.5) {
        Vec6 t = Vec6::Zero();
        t[i] = mag;
        const double p = regularizer_eval(t, cfg);
        CHECK(p >= prev - 1e-12);
        prev = p;
      }
    }
  }

  SUBCASE("folded-normal density is flat near zero and decreasing past mu") {
    const double mu = 10.0;
    // Finite differences of the density itself.
    auto density = [&](double y) {
      return std::exp(-folded_normal_neg_log_pdf(y, mu, mu));
    };
    const double d0 = density(0.0);
    for (double y = 0; y <= mu / 2; y += 0.5) {
      CHECK(density(y) > 0.8 * d0);  // approximately flat on [0, mu/2]
    }
    for (double y = mu; y < 3 * mu; y += 1.0) {
      CHECK(density(y + 1.0) < density(y));  // decreasing beyond mu
    }
  }

  SUBCASE("weighted objective is normalized at the zero twist") {
    RegularizerConfig cfg;
    cfg.mode = RegularizerMode::folded_normal_magnitude;
    cfg.folded_rot_mu_deg = 2.5;
    cfg.folded_trans_mu_mm = 2.5;
    const Objective sim = [](const Eigen::VectorXd&) { return -0.5; };
    const Objective combined = make_regularized_objective(sim, cfg);
    CHECK(combined(Vec6::Zero()) == doctest::Approx(0.9 * -0.5).epsilon(1e-12));
    // Away from zero the penalty term is positive.
    Vec6 t = Vec6::Zero();
    t[0] = 20.0;
    CHECK(combined(t) > combined(Vec6::Zero()));
  }
}
