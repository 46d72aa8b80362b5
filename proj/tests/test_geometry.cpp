#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "rvo/errors.hpp"
#include "rvo/geometry.hpp"
#include "support/testing.hpp"

using namespace rvo;
using namespace rvo::geometry;

namespace {

Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}
Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}
Mat3 rot_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Vec3 random_euler(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> yaw(-3.1, 3.1), pitch(-1.5, 1.5);
  return {yaw(rng), pitch(rng), yaw(rng)};
}

}  // namespace

TEST_CASE("euler_to_rotation matches the product of elementary rotations") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Vec3 e = random_euler(rng);
    const Mat3 expected = rot_z(e[0]) * rot_y(e[1]) * rot_x(e[2]);
    CHECK((euler_to_rotation(e) - expected).cwiseAbs().maxCoeff() < 1e-14);
  }
  Mat3 quarter;
  quarter << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((euler_to_rotation(Vec3(std::numbers::pi / 2, 0, 0)) - quarter).norm() < 1e-15);
}

TEST_CASE("rotation_to_euler inverts euler_to_rotation") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 e = random_euler(rng);
    CHECK((rotation_to_euler(euler_to_rotation(e)) - e).cwiseAbs().maxCoeff() < 1e-9);
  }
  CHECK(rotation_to_euler(Mat3::Identity()).norm() == 0.0);
}

TEST_CASE("gimbal lock returns a zero-roll representative of the same rotation") {
  for (double pitch : {std::numbers::pi / 2, -std::numbers::pi / 2}) {
    const Mat3 R = euler_to_rotation(Vec3(0.3, pitch, -0.7));
    const Vec3 e = rotation_to_euler(R);
    CHECK(e[2] == 0.0);
    CHECK((euler_to_rotation(e) - R).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("rotation_to_euler rejects non-rotations") {
  CHECK_THROWS_AS(rotation_to_euler(2.0 * Mat3::Identity()), NonOrthonormalInput);
  Mat3 reflection = Mat3::Identity();
  reflection(2, 2) = -1;
  CHECK_THROWS_AS(rotation_to_euler(reflection), NonOrthonormalInput);
  Mat3 nan = Mat3::Identity();
  nan(0, 1) = std::nan("");
  CHECK_THROWS_AS(rotation_to_euler(nan), NonOrthonormalInput);
}

TEST_CASE("compose_pose agrees with the homogeneous matrix product") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> t(-5, 5);
  for (int i = 0; i < 1000; ++i) {
    const Pose a{random_euler(rng), Vec3(t(rng), t(rng), t(rng))};
    const Pose b{random_euler(rng), Vec3(t(rng), t(rng), t(rng))};
    const Mat4 expected = to_transform(a).matrix() * to_transform(b).matrix();
    CHECK((to_transform(compose_pose(a, b)).matrix() - expected).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("compose with identity is a no-op and warp round-trips through the inverse") {
  std::mt19937_64 rng(6);
  const Pose p{Vec3(0.2, -0.1, 0.05), Vec3(1, 2, 3)};
  const Pose same = compose_pose(Pose::identity(), p);
  CHECK((same.eula - p.eula).norm() < 1e-12);
  CHECK((same.t - p.t).norm() == 0.0);

  Points3d pts(50, 3);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 50; ++i) pts.row(i) << u(rng), u(rng), u(rng);
  const Pose inv = to_pose(to_transform(p).inverse());
  const Points3d back = warp_points(warp_points(pts, p), inv);
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((warp_points(pts, Pose::identity()) - pts).norm() == 0.0);
}

TEST_CASE("projection of a point on the optical axis lands on the principal point") {
  const auto calib = testing::front_camera(64, 48);
  Points3d pts(4, 3);
  pts << 5, 0, 0,     // straight ahead
      -2, 0, 0,        // behind the camera
      0.05, 0, 0,      // in front but closer than z_min
      5, 50, 0;        // far to the left, outside the image
  const auto proj = project_points(pts, calib, {64, 48});
  CHECK(proj.uv(0, 0) == doctest::Approx(32.0));
  CHECK(proj.uv(0, 1) == doctest::Approx(24.0));
  CHECK(proj.depth(0) == doctest::Approx(5.0));
  CHECK(proj.valid == std::vector<uint8_t>{1, 0, 0, 0});
  CHECK(proj.uv.allFinite());
}

TEST_CASE("projection uses continuous coordinates") {
  const auto calib = testing::front_camera(64, 48);
  Points3d pts(1, 3);
  pts << 10, -1.3, 0.7;  // camera x = 1.3, y = -0.7, z = 10
  const auto proj = project_points(pts, calib, {64, 48});
  CHECK(proj.uv(0, 0) == doctest::Approx(32.0 + 32.0 * 0.13));
  CHECK(proj.uv(0, 1) == doctest::Approx(24.0 - 32.0 * 0.07));
}

TEST_CASE("trajectory files round-trip and report the failing line") {
  std::vector<Mat4> poses;
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5; ++i) {
    poses.push_back(RigidTransform{testing::random_rotation(rng), Vec3(i, -i, 0.5 * i)}.matrix());
  }
  std::stringstream ss;
  write_trajectory(ss, poses);
  const auto back = read_trajectory(ss);
  REQUIRE(back.size() == poses.size());
  for (size_t i = 0; i < poses.size(); ++i) CHECK((back[i] - poses[i]).norm() == 0.0);

  std::istringstream bad("1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n");
  try {
    read_trajectory(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::istringstream word("1 0 0 0 0 1 0 x 0 0 1 0\n");
  CHECK_THROWS_AS(read_trajectory(word), ParseError);
}

TEST_CASE("calibration files round-trip and missing data is reported") {
  const auto dir = std::filesystem::temp_directory_path() / "rvo_test_calib";
  std::filesystem::create_directories(dir);
  const auto calib = testing::front_camera(64, 48);
  write_calibration(dir / "calib.json", calib);
  const auto back = read_calibration(dir / "calib.json");
  CHECK((back.K - calib.K).norm() == 0.0);
  CHECK((back.T_cr - calib.T_cr).norm() == 0.0);

  CHECK_THROWS_AS(read_calibration(dir / "absent.json"), MissingCalibration);
  std::ofstream(dir / "partial.json") << R"({"K": [1,0,0,0,1,0,0,0,1]})";
  CHECK_THROWS_AS(read_calibration(dir / "partial.json"), MissingCalibration);
  std::ofstream(dir / "skew.json")
      << R"({"K": [1,0,0,0,1,0,0,0,1], "T_cr": [2,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1]})";
  CHECK_THROWS_AS(read_calibration(dir / "skew.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
