// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/optim.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace fragreg {

BoxConstraints BoxConstraints::around(const Eigen::VectorXd& center,
                                      const Eigen::VectorXd& half_width) {
  BoxConstraints b;
  b.center = center;
  b.half_width = half_width;
  b.validate();
  return b;
}

void BoxConstraints::validate() const {
  if (center.size() != half_width.size()) {
    throw std::invalid_argument("box: center/half-width size mismatch");
  }
  if ((half_width.array() <= 0).any()) {
    throw std::invalid_argument("box: half-widths must be > 0");
  }
}

bool BoxConstraints::strictly_inside(const Eigen::VectorXd& x, double tol) const {
  return ((x - lower()).array() > tol).all() && ((upper() - x).array() > tol).all();
}

Eigen::VectorXd BoxConstraints::clamp(const Eigen::VectorXd& x) const {
  return x.cwiseMax(lower()).cwiseMin(upper());
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Quadratic model q(xb + s) = c + g's + 0.5 s'H s interpolating the sample
// set with the minimum-Frobenius-norm Hessian (KKT linear system; H is the
// span of the sample outer products).
struct QuadModel {
  VectorXd g;
  MatrixXd h;
  double c = 0;

  double value(const VectorXd& s) const {
    return c + g.dot(s) + 0.5 * s.dot(h * s);
  }
  VectorXd grad(const VectorXd& s) const { return g + h * s; }
};

QuadModel fit_model(const std::vector<VectorXd>& pts,
                    const std::vector<double>& fs, const VectorXd& xb) {
  const int m = static_cast<int>(pts.size());
  const int n = static_cast<int>(xb.size());

  MatrixXd d(m, n);
  for (int j = 0; j < m; ++j) d.row(j) = (pts[j] - xb).transpose();

  // Scale displacements to unit RMS for conditioning.
  double rms = std::sqrt(d.squaredNorm() / std::max(1, m));
  if (rms < 1e-300) rms = 1.0;
  const MatrixXd ds = d / rms;

  MatrixXd kkt = MatrixXd::Zero(m + n + 1, m + n + 1);
  for (int j = 0; j < m; ++j) {
    for (int k = 0; k < m; ++k) {
      const double dot = ds.row(j).dot(ds.row(k));
      kkt(j, k) = 0.5 * dot * dot;
    }
    kkt(j, j) += 1e-12;
    kkt(j, m) = 1.0;
    kkt(m, j) = 1.0;
    kkt.block(j, m + 1, 1, n) = ds.row(j);
    kkt.block(m + 1, j, n, 1) = ds.row(j).transpose();
  }

  VectorXd rhs = VectorXd::Zero(m + n + 1);
  for (int j = 0; j < m; ++j) rhs[j] = fs[j];

  const VectorXd sol = kkt.fullPivLu().solve(rhs);

  QuadModel q;
  q.c = sol[m];
  q.g = sol.segment(m + 1, n) / rms;
  q.h = MatrixXd::Zero(n, n);
  for (int j = 0; j < m; ++j) {
    q.h += sol[j] * (ds.row(j).transpose() * ds.row(j));
  }
  q.h /= (rms * rms);
  return q;
}

// Minimizes the model over {||s|| <= delta} intersected with box bounds
// relative to xb, by projected gradient steps with exact line search along
// each (possibly negative-curvature) direction.
VectorXd solve_trust_region(const QuadModel& q, const VectorXd& lo,
                            const VectorXd& up, double delta) {
  const int n = static_cast<int>(q.g.size());
  VectorXd s = VectorXd::Zero(n);

  for (int iter = 0; iter < 60; ++iter) {
    VectorXd grad = q.grad(s);
    VectorXd dir = -grad;
    // Remove components that push through an active box face.
    for (int i = 0; i < n; ++i) {
      if ((s[i] <= lo[i] + 1e-14 && dir[i] < 0) ||
          (s[i] >= up[i] - 1e-14 && dir[i] > 0)) {
        dir[i] = 0;
      }
    }
    const double dn = dir.norm();
    if (dn < 1e-14 * std::max(1.0, q.g.norm())) break;

    // Maximum step that stays inside the box...
    double t_max = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      if (dir[i] > 0) t_max = std::min(t_max, (up[i] - s[i]) / dir[i]);
      else if (dir[i] < 0) t_max = std::min(t_max, (lo[i] - s[i]) / dir[i]);
    }
    // ...and inside the trust-region ball.
    const double a = dir.squaredNorm();
    const double b = 2.0 * s.dot(dir);
    const double cc = s.squaredNorm() - delta * delta;
    const double disc = b * b - 4 * a * cc;
    if (disc > 0) {
      const double t_ball = (-b + std::sqrt(disc)) / (2 * a);
      t_max = std::min(t_max, std::max(0.0, t_ball));
    } else {
      t_max = 0;
    }
    if (t_max <= 0) break;

    const double curv = dir.dot(q.h * dir);
    double t = t_max;
    if (curv > 0) t = std::min(t_max, -grad.dot(dir) / curv);
    if (t <= 0) break;
    s += t * dir;
    if (t == t_max && s.norm() >= delta - 1e-12) break;  // on the ball surface
  }
  return s;
}

}  // namespace

OptimResult bobyqa_minimize(const Objective& f, const Eigen::VectorXd& x0,
                            const BoxConstraints& box, const BobyqaOptions& opts) {
  box.validate();
  const int n = static_cast<int>(x0.size());
  if (box.center.size() != n) {
    throw std::invalid_argument("bobyqa_minimize: box dimension mismatch");
  }
  if (!box.strictly_inside(x0)) {
    throw std::invalid_argument("bobyqa_minimize: x0 outside box");
  }
  const VectorXd lo = box.lower(), up = box.upper();

  const double span = box.half_width.minCoeff();
  double rho = std::min(0.25 * span, box.half_width.maxCoeff() * 0.1);
  if (rho <= 0) rho = span * 0.25;
  double delta = rho;
  const double rho_end = std::min(opts.rho_end, rho);

  std::vector<VectorXd> pts;
  std::vector<double> fs;
  auto evaluate = [&](const VectorXd& x) {
    const double v = f(x);
    pts.push_back(x);
    fs.push_back(std::isfinite(v) ? v : std::numeric_limits<double>::max());
    return fs.back();
  };

  OptimResult best;
  best.x = x0;
  best.f = evaluate(x0);

  // Initial simplex-like set: +/- rho along each axis, kept inside the box.
  for (int i = 0; i < n && static_cast<int>(pts.size()) < opts.max_evaluations; ++i) {
    VectorXd x = x0;
    x[i] = std::min(x0[i] + rho, up[i] - 1e-12 * span);
    evaluate(x);
    if (static_cast<int>(pts.size()) >= opts.max_evaluations) break;
    x = x0;
    x[i] = std::max(x0[i] - rho, lo[i] + 1e-12 * span);
    evaluate(x);
  }
  for (std::size_t j = 0; j < pts.size(); ++j) {
    if (fs[j] < best.f) {
      best.f = fs[j];
      best.x = pts[j];
    }
  }

  const std::size_t max_pts = std::min<std::size_t>(
      (std::size_t(n) + 1) * (n + 2) / 2 + n, 3 * std::size_t(n) * n + 10);
  int geom_axis = 0;

  while (static_cast<int>(pts.size()) < opts.max_evaluations) {
    ++best.iterations;

    // Model over the points nearest the incumbent.
    std::vector<int> idx(pts.size());
    for (std::size_t j = 0; j < pts.size(); ++j) idx[j] = static_cast<int>(j);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return (pts[a] - best.x).squaredNorm() < (pts[b] - best.x).squaredNorm();
    });
    const std::size_t m_use = std::min(max_pts, pts.size());
    std::vector<VectorXd> mp(m_use);
    std::vector<double> mf(m_use);
    for (std::size_t j = 0; j < m_use; ++j) {
      mp[j] = pts[idx[j]];
      mf[j] = fs[idx[j]];
    }
    const QuadModel q = fit_model(mp, mf, best.x);

    const VectorXd s =
        solve_trust_region(q, lo - best.x, up - best.x, delta);
    const double pred = -(q.value(s) - q.value(VectorXd::Zero(n)));
    const double step_norm = s.norm();

    if (step_norm < 0.5 * rho || pred <= 0) {
      // Model step is too small at this resolution: refine rho or improve
      // the sample geometry with an axis probe at the current scale.
      if (rho <= rho_end) break;
      if (delta > rho) {
        delta = std::max(rho, 0.5 * delta);
      } else {
        rho = std::max(rho_end, 0.1 * rho);
        delta = std::max(rho, 0.5 * delta);
      }
      VectorXd x = best.x;
      const int axis = geom_axis++ % n;
      const double room_up = up[axis] - x[axis];
      const double room_dn = x[axis] - lo[axis];
      x[axis] += (room_up >= room_dn) ? std::min(delta, room_up)
                                      : -std::min(delta, room_dn);
      if ((x - best.x).norm() > 1e-15) {
        const double fv = evaluate(x);
        if (fv < best.f) {
          best.f = fv;
          best.x = x;
        }
      }
      continue;
    }

    const VectorXd x_new = box.clamp(best.x + s);
    const double f_new = evaluate(x_new);
    const double actual = best.f - f_new;
    const double ratio = actual / pred;

    if (ratio >= 0.7) {
      delta = std::max(delta, 2.0 * step_norm);
    } else if (ratio < 0.1) {
      delta = std::max(rho, 0.25 * step_norm);
    }

    if (f_new < best.f) {
      best.f = f_new;
      best.x = x_new;
    }

    // Bound the stored history: drop the farthest point from the incumbent.
    while (pts.size() > 4 * max_pts) {
      std::size_t far = 0;
      double dmax = -1;
      for (std::size_t j = 0; j < pts.size(); ++j) {
        const double dd = (pts[j] - best.x).squaredNorm();
        if (dd > dmax) {
          dmax = dd;
          far = j;
        }
      }
      pts.erase(pts.begin() + far);
      fs.erase(fs.begin() + far);
    }
  }

  best.evaluations = static_cast<int>(pts.size());
  return best;
}

}  // namespace fragreg
