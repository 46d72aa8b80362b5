#include "rvo/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "rvo/errors.hpp"

namespace rvo::geometry {

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = R;
  m.topRightCorner<3, 1>() = t;
  return m;
}

RigidTransform RigidTransform::inverse() const {
  return {R.transpose(), -(R.transpose() * t)};
}

RigidTransform RigidTransform::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  return {a.R * b.R, a.R * b.t + a.t};
}

Mat3 euler_to_rotation(const Vec3& eula) {
  const double ca = std::cos(eula[0]), sa = std::sin(eula[0]);
  const double cb = std::cos(eula[1]), sb = std::sin(eula[1]);
  const double cc = std::cos(eula[2]), sc = std::sin(eula[2]);
  Mat3 R;
  R << ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc,  //
      sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc,   //
      -sb, cb * sc, cb * cc;
  return R;
}

Vec3 rotation_to_euler(const Mat3& R) {
  const double ortho = (R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!R.allFinite() || ortho > 1e-5 || std::abs(R.determinant() - 1.0) > 1e-5) {
    throw NonOrthonormalInput("rotation_to_euler: matrix is not a rotation (|R^T R - I| = " +
                              std::to_string(ortho) + ")");
  }
  const double s = std::clamp(-R(2, 0), -1.0, 1.0);
  if (std::abs(R(2, 0)) > 1.0 - 1e-7) {
    // Only yaw - roll (or yaw + roll) is observable; report roll = 0.
    return {std::atan2(-R(0, 1), R(1, 1)), std::asin(s), 0.0};
  }
  return {std::atan2(R(1, 0), R(0, 0)), std::asin(s), std::atan2(R(2, 1), R(2, 2))};
}

RigidTransform to_transform(const Pose& pose) { return {euler_to_rotation(pose.eula), pose.t}; }

Pose to_pose(const RigidTransform& transform) {
  return {rotation_to_euler(transform.R), transform.t};
}

template <typename T>
Points<T> warp_points(const Points<T>& points, const Pose& pose) {
  const Eigen::Matrix<T, 3, 3> R = euler_to_rotation(pose.eula).cast<T>();
  const Eigen::Matrix<T, 1, 3> t = pose.t.cast<T>().transpose();
  Points<T> out(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    out.row(i) = (R * points.row(i).transpose()).transpose() + t;
  }
  return out;
}

template Points<float> warp_points<float>(const Points<float>&, const Pose&);
template Points<double> warp_points<double>(const Points<double>&, const Pose&);

Pose compose_pose(const Pose& outer, const Pose& inner) {
  const Mat3 Ro = euler_to_rotation(outer.eula);
  const Mat3 R = Ro * euler_to_rotation(inner.eula);
  return {rotation_to_euler(R), Ro * inner.t + outer.t};
}

Projection project_points(const Points3d& points, const Calibration& calib, ImageSize image,
                          double z_min) {
  const Eigen::Index n = points.rows();
  Projection out;
  out.uv.resize(n, 2);
  out.depth.resize(n);
  out.valid.assign(static_cast<size_t>(n), 0);
  const Mat3 R = calib.T_cr.topLeftCorner<3, 3>();
  const Vec3 t = calib.T_cr.topRightCorner<3, 1>();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 c = R * points.row(i).transpose() + t;
    const Vec3 pix = calib.K * c;
    const double z = c.z();
    const double denom = z > z_min ? z : z_min;
    out.uv(i, 0) = pix.x() / denom;
    out.uv(i, 1) = pix.y() / denom;
    out.depth(i) = z;
    const bool in_front = z > z_min;
    const bool inside = out.uv(i, 0) >= 0.0 && out.uv(i, 0) < image.width && out.uv(i, 1) >= 0.0 &&
                        out.uv(i, 1) < image.height;
    out.valid[static_cast<size_t>(i)] = (in_front && inside) ? 1 : 0;
  }
  return out;
}

void validate(const Calibration& calib) {
  const Mat3& K = calib.K;
  if (!K.allFinite() || !calib.T_cr.allFinite()) throw ConfigError("calibration: non-finite entry");
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw ConfigError("calibration: K must be upper-triangular");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || K(2, 2) != 1.0) {
    throw ConfigError("calibration: K needs positive focal lengths and K[2,2] = 1");
  }
  const Mat3 R = calib.T_cr.topLeftCorner<3, 3>();
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
      std::abs(R.determinant() - 1.0) > 1e-6) {
    throw ConfigError("calibration: T_cr rotation block is not orthonormal");
  }
  if (calib.T_cr.row(3) != Eigen::RowVector4d(0, 0, 0, 1)) {
    throw ConfigError("calibration: T_cr last row must be (0,0,0,1)");
  }
}

std::vector<Mat4> read_trajectory(std::istream& in) {
  std::vector<Mat4> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Mat4 m = Mat4::Identity();
    for (int k = 0; k < 12; ++k) {
      std::string token;
      if (!(ss >> token)) throw ParseError("trajectory: expected 12 values", line_no);
      try {
        size_t used = 0;
        m(k / 4, k % 4) = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw ParseError("trajectory: bad number '" + token + "'", line_no);
      }
    }
    std::string extra;
    if (ss >> extra) throw ParseError("trajectory: more than 12 values", line_no);
    if (!m.allFinite()) throw ParseError("trajectory: non-finite value", line_no);
    poses.push_back(m);
  }
  return poses;
}

std::vector<Mat4> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open trajectory file " + path.string());
  return read_trajectory(in);
}

void write_trajectory(std::ostream& out, const std::vector<Mat4>& poses) {
  out << std::setprecision(17);
  for (const auto& m : poses) {
    for (int k = 0; k < 12; ++k) out << (k ? " " : "") << m(k / 4, k % 4);
    out << '\n';
  }
}

void write_trajectory(const std::filesystem::path& path, const std::vector<Mat4>& poses) {
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot write trajectory file " + path.string());
  write_trajectory(out, poses);
}

Calibration read_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingCalibration("missing calibration file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError("calibration " + path.string() + ": " + e.what());
  }
  if (!j.contains("K") || !j.contains("T_cr")) {
    throw MissingCalibration("calibration " + path.string() + " lacks K or T_cr");
  }
  auto k = j.at("K").get<std::vector<double>>();
  auto tcr = j.at("T_cr").get<std::vector<double>>();
  if (k.size() != 9 || tcr.size() != 16) {
    throw DataFormatError("calibration " + path.string() + ": K needs 9 and T_cr 16 values");
  }
  Calibration calib;
  for (int i = 0; i < 9; ++i) calib.K(i / 3, i % 3) = k[i];
  for (int i = 0; i < 16; ++i) calib.T_cr(i / 4, i % 4) = tcr[i];
  validate(calib);
  return calib;
}

void write_calibration(const std::filesystem::path& path, const Calibration& calib) {
  nlohmann::json j;
  std::vector<double> k, tcr;
  for (int i = 0; i < 9; ++i) k.push_back(calib.K(i / 3, i % 3));
  for (int i = 0; i < 16; ++i) tcr.push_back(calib.T_cr(i / 4, i % 4));
  j["K"] = k;
  j["T_cr"] = tcr;
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot write calibration " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace rvo::geometry
