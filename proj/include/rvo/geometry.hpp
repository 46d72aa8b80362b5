#pragma once

// Rigid-motion algebra shared by the whole pipeline.
//
// Euler convention: intrinsic Z-Y-X, R = Rz(eula[0]) * Ry(eula[1]) * Rx(eula[2]),
// angles in radians. A Pose (eula, t) maps a point p to R * p + t.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace rvo::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

template <typename T>
using Points = Eigen::Matrix<T, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points3d = Points<double>;

inline constexpr double kProjectionMinDepth = 0.1;

struct Pose {
  Vec3 eula = Vec3::Zero();
  Vec3 t = Vec3::Zero();

  static Pose identity() { return {}; }
};

struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Mat4 matrix() const;
  RigidTransform inverse() const;
  static RigidTransform from_matrix(const Mat4& m);
  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);
};

struct Calibration {
  Mat3 K = Mat3::Identity();
  Mat4 T_cr = Mat4::Identity();
};

struct ImageSize {
  int width = 0;
  int height = 0;
};

struct Projection {
  Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor> uv;
  Eigen::VectorXd depth;
  std::vector<uint8_t> valid;
};

Mat3 euler_to_rotation(const Vec3& eula);

/// Inverse of euler_to_rotation. Near gimbal lock (|R(2,0)| > 1 - 1e-7) the
/// representative with zero roll is returned. Throws NonOrthonormalInput when
/// R is not a rotation within 1e-5.
Vec3 rotation_to_euler(const Mat3& R);

RigidTransform to_transform(const Pose& pose);
Pose to_pose(const RigidTransform& transform);

/// output[i] = R * points[i] + t.
template <typename T>
Points<T> warp_points(const Points<T>& points, const Pose& pose);

/// R = R_outer * R_inner, t = R_outer * t_inner + t_outer.
Pose compose_pose(const Pose& outer, const Pose& inner);

/// Pinhole projection of radar-frame points. uv is continuous; points whose
/// camera depth is <= z_min or whose uv falls outside the image are flagged
/// invalid (uv stays finite for them).
Projection project_points(const Points3d& points, const Calibration& calib, ImageSize image,
                          double z_min = kProjectionMinDepth);

/// Throws ConfigError when K or T_cr violate their invariants.
void validate(const Calibration& calib);

// ---- file formats -----------------------------------------------------------

/// One line per pose: 12 floats, row-major 3x4 [R|t]. Throws ParseError.
std::vector<Mat4> read_trajectory(std::istream& in);
std::vector<Mat4> read_trajectory(const std::filesystem::path& path);
void write_trajectory(std::ostream& out, const std::vector<Mat4>& poses);
void write_trajectory(const std::filesystem::path& path, const std::vector<Mat4>& poses);

/// JSON with "K" (9 floats, row-major) and "T_cr" (16 floats, row-major).
Calibration read_calibration(const std::filesystem::path& path);
void write_calibration(const std::filesystem::path& path, const Calibration& calib);

}  // namespace rvo::geometry
