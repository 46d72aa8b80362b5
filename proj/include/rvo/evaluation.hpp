#pragma once

// Trajectory assembly and odometry metrics: segment drift over 20..160 m
// sub-paths and fixed-interval relative pose error.

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "rvo/geometry.hpp"

namespace rvo::eval {

struct Trajectory {
  std::vector<geometry::Mat4> poses;
  std::vector<double> arclength;

  static Trajectory from_poses(std::vector<geometry::Mat4> poses);
  size_t size() const { return poses.size(); }
};

/// T_0 = I, T_i = T_{i-1} * relative_i.
Trajectory assemble(const std::vector<geometry::Pose>& relatives);

inline const std::vector<double> kSegmentLengths{20, 40, 60, 80, 100, 120, 140, 160};

struct SegmentRow {
  double length = 0.0;
  int segments = 0;  // 0 marks the length as unavailable
  double t_err = 0.0;  // m/m
  double r_err = 0.0;  // deg/m
};

struct RpeResult {
  int delta = 1;
  std::vector<double> translation;  // m, one per interval
  std::vector<double> rotation;     // deg
  double translation_rmse = 0.0;
  double rotation_rmse = 0.0;
};

struct MetricReport {
  std::vector<SegmentRow> lengths;
  std::optional<double> t_rel;  // mean over available lengths, m/m
  std::optional<double> r_rel;  // deg/m
  std::optional<RpeResult> rpe;

  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Rotation angle of R in degrees, atan2 of the skew and trace parts.
double rotation_angle_deg(const geometry::Mat3& R);

/// Throws LengthMismatch when the trajectories differ in length.
MetricReport segment_errors(const Trajectory& estimate, const Trajectory& gt,
                            const std::vector<double>& lengths = kSegmentLengths);

RpeResult rpe(const Trajectory& estimate, const Trajectory& gt, int delta = 1);

}  // namespace rvo::eval
