// fragreg - fluoroscopic bone fragment registration
// SPDX-License-Identifier: MIT

#include "fragreg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace fragreg {

const char* shape_mode_name(ShapeMode m) {
  switch (m) {
    case ShapeMode::all_cuts_known: return "all-cuts-known";
    case ShapeMode::no_cuts_known: return "no-cuts-known";
    case ShapeMode::ilium_pubis_known: return "ilium-pubis-known";
    case ShapeMode::ilium_pubis_estimated: return "ilium-pubis-estimated";
  }
  return "unknown";
}

ShapeMode shape_mode_from_name(const std::string& s) {
  for (ShapeMode m : {ShapeMode::all_cuts_known, ShapeMode::no_cuts_known,
                      ShapeMode::ilium_pubis_known,
                      ShapeMode::ilium_pubis_estimated}) {
    if (s == shape_mode_name(m)) return m;
  }
  throw std::invalid_argument("unknown shape mode: " + s);
}

RigidPose ground_truth_delta_app(const MovementSample& move, const AppFrame& app) {
  // The simulated fragment sits at world pose app * M * app^-1 while the
  // pelvis stays at identity; compose exactly as the registration output
  // does so estimated and true deltas share conventions.
  const RigidPose frag_world = movement_world_pose(move.fragment_pose_app(), app);
  const RigidPose t_c_fv = frag_world.inverse();  // camera frame = world
  const RigidPose t_c_pv = RigidPose::identity();
  return relative_pose_app(t_c_fv, t_c_pv, app.pose);
}

TrialOutcome evaluate_trial(const RegistrationResult& result,
                            const MovementSample& gt_move, const RimTrace& rim,
                            const Vec3& head_center_vol, const AppFrame& app,
                            Side side) {
  TrialOutcome out;
  const RigidPose delta_gt = ground_truth_delta_app(gt_move, app);

  // The deltas are already APP-frame maps, so decompose about the identity
  // frame's axes.
  out.pose_error =
      pose_error_decompose(result.delta_app, delta_gt, AppFrame::identity(side));
  out.lce_error_deg =
      std::abs(compute_lce(rim, head_center_vol, result.delta_app, app, side) -
               compute_lce(rim, head_center_vol, delta_gt, app, side));
  out.phase_seconds = result.phase_seconds;
  return out;
}

namespace {

AggregateColumn column(const std::vector<double>& values) {
  AggregateColumn c;
  if (values.empty()) return c;
  c.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double ss = 0;
  for (double v : values) ss += (v - c.mean) * (v - c.mean);
  c.stddev = std::sqrt(ss / values.size());
  return c;
}

}  // namespace

Summary aggregate(const std::vector<TrialOutcome>& outcomes,
                  const std::vector<double>& thresholds_deg,
                  bool exclude_outliers) {
  if (outcomes.empty()) {
    throw std::invalid_argument("aggregate: empty outcome list");
  }

  Summary summary;
  std::vector<ShapeMode> modes;
  for (const auto& o : outcomes) {
    if (std::find(modes.begin(), modes.end(), o.mode) == modes.end()) {
      modes.push_back(o.mode);
    }
    summary.failed += o.failed ? 1 : 0;
    summary.outliers += o.outlier ? 1 : 0;
  }

  for (ShapeMode mode : modes) {
    AggregateRow row;
    row.mode = mode;
    std::vector<double> rot, rot_lr, rot_is, rot_ap;
    std::vector<double> trans, trans_lr, trans_is, trans_ap, lce;
    for (const auto& o : outcomes) {
      if (o.mode != mode || o.failed) continue;
      if (exclude_outliers && o.outlier) continue;
      rot.push_back(o.pose_error.rot_total_deg);
      rot_lr.push_back(o.pose_error.rot_axis_deg.x());
      rot_is.push_back(o.pose_error.rot_axis_deg.y());
      rot_ap.push_back(o.pose_error.rot_axis_deg.z());
      trans.push_back(o.pose_error.trans_total_mm);
      trans_lr.push_back(o.pose_error.trans_axis_mm.x());
      trans_is.push_back(o.pose_error.trans_axis_mm.y());
      trans_ap.push_back(o.pose_error.trans_axis_mm.z());
      lce.push_back(o.lce_error_deg);
    }
    row.count = static_cast<int>(rot.size());
    row.rot_total = column(rot);
    row.rot_lr = column(rot_lr);
    row.rot_is = column(rot_is);
    row.rot_ap = column(rot_ap);
    row.trans_total = column(trans);
    row.trans_lr = column(trans_lr);
    row.trans_is = column(trans_is);
    row.trans_ap = column(trans_ap);
    row.lce = column(lce);
    for (double th : thresholds_deg) {
      auto frac_below = [&](const std::vector<double>& vals) {
        if (vals.empty()) return 0.0;
        const auto n = std::count_if(vals.begin(), vals.end(),
                                     [&](double v) { return v < th; });
        return double(n) / double(vals.size());
      };
      row.rot_below[th] = frac_below(rot);
      row.lce_below[th] = frac_below(lce);
    }
    summary.rows.push_back(row);
  }
  return summary;
}

void write_summary_csv(const Summary& summary, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "mode,count"
      << ",rot_ap_mean,rot_ap_std,rot_lr_mean,rot_lr_std,rot_is_mean,rot_is_std"
      << ",rot_total_mean,rot_total_std"
      << ",trans_ap_mean,trans_ap_std,trans_lr_mean,trans_lr_std"
      << ",trans_is_mean,trans_is_std,trans_total_mean,trans_total_std"
      << ",lce_mean,lce_std";
  if (!summary.rows.empty()) {
    for (const auto& [th, frac] : summary.rows.front().rot_below) {
      out << ",rot_below_" << th << ",lce_below_" << th;
    }
  }
  out << "\n";
  for (const auto& r : summary.rows) {
    out << shape_mode_name(r.mode) << ',' << r.count << ',' << r.rot_ap.mean
        << ',' << r.rot_ap.stddev << ',' << r.rot_lr.mean << ',' << r.rot_lr.stddev
        << ',' << r.rot_is.mean << ',' << r.rot_is.stddev << ',' << r.rot_total.mean
        << ',' << r.rot_total.stddev << ',' << r.trans_ap.mean << ','
        << r.trans_ap.stddev << ',' << r.trans_lr.mean << ',' << r.trans_lr.stddev
        << ',' << r.trans_is.mean << ',' << r.trans_is.stddev << ','
        << r.trans_total.mean << ',' << r.trans_total.stddev << ',' << r.lce.mean
        << ',' << r.lce.stddev;
    for (const auto& [th, frac] : r.rot_below) {
      out << ',' << frac << ',' << r.lce_below.at(th);
    }
    out << "\n";
  }
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Number of arrangements of n 'a' and m 'b' observations with U statistic
// exactly u, via the standard recurrence. Values fit in doubles exactly for
// the sizes where the exact path is used.
double exact_p_u_le(int n, int m, double u_obs) {
  const int umax = n * m;
  std::vector<std::vector<double>> table(
      static_cast<std::size_t>(n) + 1,
      std::vector<double>(static_cast<std::size_t>(umax) + 1, 0.0));
  // counts for (i a's, j b's) built incrementally over j.
  // c_{i,j}(u) = c_{i-1,j}(u - j) + c_{i,j-1}(u)
  for (int j = 0; j <= m; ++j) {
    std::vector<std::vector<double>> next(
        static_cast<std::size_t>(n) + 1,
        std::vector<double>(static_cast<std::size_t>(umax) + 1, 0.0));
    for (int i = 0; i <= n; ++i) {
      for (int u = 0; u <= umax; ++u) {
        if (i == 0) {
          next[i][u] = (u == 0) ? 1.0 : 0.0;
          continue;
        }
        double c = 0;
        if (u >= j) c += next[i - 1][u - j];
        if (j > 0) c += table[i][u];
        next[i][u] = c;
      }
    }
    table.swap(next);
  }
  double total = 0, below = 0;
  for (int u = 0; u <= umax; ++u) {
    total += table[n][u];
    if (u <= u_obs + 1e-9) below += table[n][u];
  }
  return below / total;
}

}  // namespace

MannWhitneyResult mann_whitney_u(const std::vector<double>& a,
                                 const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("mann_whitney_u: empty sample");
  }
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());

  // Midranks over the pooled sample.
  struct Tagged {
    double v;
    bool from_a;
  };
  std::vector<Tagged> pooled;
  pooled.reserve(n + m);
  for (double v : a) pooled.push_back({v, true});
  for (double v : b) pooled.push_back({v, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Tagged& x, const Tagged& y) { return x.v < y.v; });

  double rank_sum_a = 0;
  double tie_term = 0;
  bool has_ties = false;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].v == pooled[i].v) ++j;
    const double t = double(j - i);
    if (t > 1) {
      has_ties = true;
      tie_term += t * t * t - t;
    }
    const double midrank = 0.5 * (double(i + 1) + double(j));
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].from_a) rank_sum_a += midrank;
    }
    i = j;
  }

  MannWhitneyResult res;
  res.u = rank_sum_a - double(n) * (n + 1) / 2.0;

  if (!has_ties && std::max(n, m) <= 30) {
    res.exact = true;
    res.p = exact_p_u_le(n, m, res.u);
    return res;
  }

  const double big_n = n + m;
  const double mu = double(n) * m / 2.0;
  const double var = double(n) * m / 12.0 *
                     ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0) {
    res.p = 0.5;  // all observations identical
    return res;
  }
  // One-tailed, alternative "b greater" means small U_a; continuity
  // corrected toward the alternative.
  res.p = normal_cdf((res.u + 0.5 - mu) / std::sqrt(var));
  return res;
}

}  // namespace fragreg
