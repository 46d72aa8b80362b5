#include "rvo/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "rvo/errors.hpp"

namespace rvo::eval {

using geometry::Mat3;
using geometry::Mat4;

namespace {

Mat4 inverse_rigid(const Mat4& m) { return geometry::RigidTransform::from_matrix(m).inverse().matrix(); }

struct PairError {
  double translation;
  double rotation_deg;
};

/// Error of the estimated motion between two frames relative to the true one.
PairError motion_error(const Trajectory& est, const Trajectory& gt, size_t i, size_t j) {
  const Mat4 d_gt = inverse_rigid(gt.poses[i]) * gt.poses[j];
  const Mat4 d_est = inverse_rigid(est.poses[i]) * est.poses[j];
  const Mat3 r_gt = d_gt.topLeftCorner<3, 3>();
  const geometry::Vec3 dt = d_est.topRightCorner<3, 1>() - d_gt.topRightCorner<3, 1>();
  return {(r_gt.transpose() * dt).norm(),
          rotation_angle_deg(r_gt.transpose() * d_est.topLeftCorner<3, 3>())};
}

void check_lengths(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) {
    throw LengthMismatch("trajectories have " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " poses");
  }
}

}  // namespace

Trajectory Trajectory::from_poses(std::vector<Mat4> poses) {
  Trajectory t;
  t.poses = std::move(poses);
  t.arclength.reserve(t.poses.size());
  for (size_t i = 0; i < t.poses.size(); ++i) {
    const double step =
        i == 0 ? 0.0
               : (t.poses[i].topRightCorner<3, 1>() - t.poses[i - 1].topRightCorner<3, 1>()).norm();
    t.arclength.push_back(i == 0 ? 0.0 : t.arclength.back() + step);
  }
  return t;
}

Trajectory assemble(const std::vector<geometry::Pose>& relatives) {
  std::vector<Mat4> poses{Mat4::Identity()};
  for (const auto& r : relatives) poses.push_back(poses.back() * geometry::to_transform(r).matrix());
  return Trajectory::from_poses(std::move(poses));
}

double rotation_angle_deg(const Mat3& R) {
  const geometry::Vec3 axis(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (R.trace() - 1.0)) * 180.0 / std::numbers::pi;
}

MetricReport segment_errors(const Trajectory& estimate, const Trajectory& gt,
                            const std::vector<double>& lengths) {
  check_lengths(estimate, gt);
  MetricReport report;
  double t_sum = 0.0, r_sum = 0.0;
  int available = 0;
  for (double len : lengths) {
    SegmentRow row;
    row.length = len;
    for (size_t start = 0; start < gt.size(); ++start) {
      const double target = gt.arclength[start] + len;
      const auto it = std::upper_bound(gt.arclength.begin() + static_cast<std::ptrdiff_t>(start),
                                       gt.arclength.end(), target);
      if (it == gt.arclength.end()) break;
      const auto end = static_cast<size_t>(it - gt.arclength.begin());
      const auto e = motion_error(estimate, gt, start, end);
      row.t_err += e.translation / len;
      row.r_err += e.rotation_deg / len;
      ++row.segments;
    }
    if (row.segments > 0) {
      row.t_err /= row.segments;
      row.r_err /= row.segments;
      t_sum += row.t_err;
      r_sum += row.r_err;
      ++available;
    }
    report.lengths.push_back(row);
  }
  if (available > 0) {
    report.t_rel = t_sum / available;
    report.r_rel = r_sum / available;
  }
  return report;
}

RpeResult rpe(const Trajectory& estimate, const Trajectory& gt, int delta) {
  check_lengths(estimate, gt);
  if (delta < 1) throw Error("rpe: delta must be >= 1");
  RpeResult r;
  r.delta = delta;
  double t2 = 0.0, r2 = 0.0;
  for (size_t i = 0; i + static_cast<size_t>(delta) < gt.size(); ++i) {
    const size_t j = i + static_cast<size_t>(delta);
    const auto e = motion_error(estimate, gt, i, j);
    r.translation.push_back(e.translation);
    r.rotation.push_back(e.rotation_deg);
    t2 += r.translation.back() * r.translation.back();
    r2 += r.rotation.back() * r.rotation.back();
  }
  if (!r.translation.empty()) {
    const auto m = static_cast<double>(r.translation.size());
    r.translation_rmse = std::sqrt(t2 / m);
    r.rotation_rmse = std::sqrt(r2 / m);
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : lengths) {
    nlohmann::json j{{"length_m", row.length}, {"segments", row.segments},
                     {"available", row.segments > 0}};
    if (row.segments > 0) {
      j["t_err"] = row.t_err;
      j["t_err_percent"] = 100.0 * row.t_err;
      j["r_err_deg_per_m"] = row.r_err;
    }
    rows.push_back(j);
  }
  nlohmann::json out{{"lengths", rows}};
  out["t_rel"] = t_rel ? nlohmann::json(*t_rel) : nlohmann::json();
  out["t_rel_percent"] = t_rel ? nlohmann::json(100.0 * *t_rel) : nlohmann::json();
  out["r_rel_deg_per_m"] = r_rel ? nlohmann::json(*r_rel) : nlohmann::json();
  if (rpe) {
    out["rpe"] = {{"delta", rpe->delta},
                  {"translation_rmse_m", rpe->translation_rmse},
                  {"rotation_rmse_deg", rpe->rotation_rmse},
                  {"translation_m", rpe->translation},
                  {"rotation_deg", rpe->rotation}};
  }
  return out;
}

void MetricReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(10);
  out << "length_m,segments,available,t_err,t_err_percent,r_err_deg_per_m\n";
  for (const auto& row : lengths) {
    out << row.length << ',' << row.segments << ',' << (row.segments > 0 ? 1 : 0) << ',';
    if (row.segments > 0) {
      out << row.t_err << ',' << 100.0 * row.t_err << ',' << row.r_err;
    } else {
      out << ",,";
    }
    out << '\n';
  }
}

}  // namespace rvo::eval
