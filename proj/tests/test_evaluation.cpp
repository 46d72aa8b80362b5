#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rvo/errors.hpp"
#include "rvo/evaluation.hpp"
#include "support/testing.hpp"

using namespace rvo;
using geometry::Mat4;

namespace {

Mat4 at_x(double x, double y = 0.0) {
  Mat4 m = Mat4::Identity();
  m(0, 3) = x;
  m(1, 3) = y;
  return m;
}

/// Straight 100 m path in 1 m steps.
eval::Trajectory straight(double lateral_after = 0.0, int from = 101) {
  std::vector<Mat4> poses;
  for (int i = 0; i <= 100; ++i) poses.push_back(at_x(i, i >= from ? lateral_after : 0.0));
  return eval::Trajectory::from_poses(poses);
}

eval::Trajectory curvy(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> small(0.0, 0.05);
  std::vector<geometry::Pose> rel;
  for (int i = 0; i < n; ++i) rel.push_back({{small(rng), small(rng), small(rng)}, {2.0 + small(rng), small(rng), small(rng)}});
  return eval::assemble(rel);
}

}  // namespace

TEST_CASE("assembly chains relative poses from the identity") {
  const auto t = eval::assemble({{{0, 0, 0}, {1, 0, 0}}, {{std::numbers::pi / 2, 0, 0}, {1, 0, 0}},
                                 {{0, 0, 0}, {1, 0, 0}}});
  REQUIRE(t.size() == 4);
  CHECK(t.poses[0] == Mat4::Identity());
  CHECK(t.poses[2].topRightCorner<3, 1>().isApprox(geometry::Vec3(2, 0, 0)));
  CHECK((t.poses[3].topRightCorner<3, 1>() - geometry::Vec3(2, 1, 0)).norm() < 1e-12);
  CHECK(t.arclength.back() == doctest::Approx(3.0));
  CHECK(eval::assemble({}).size() == 1);
}

TEST_CASE("identical trajectories give exactly zero error on every length 20..160") {
  std::mt19937_64 rng(1);
  const auto gt = curvy(rng, 120);
  const auto report = eval::segment_errors(gt, gt);
  REQUIRE(report.lengths.size() == 8);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(report.lengths[i].length == 20.0 * (i + 1));
    CHECK(report.lengths[i].segments > 0);
    CHECK(report.lengths[i].t_err == 0.0);
    CHECK(report.lengths[i].r_err == 0.0);
  }
  CHECK(*report.t_rel == 0.0);
  CHECK(*report.r_rel == 0.0);
  const auto r = eval::rpe(gt, gt, 3);
  CHECK(r.translation_rmse == 0.0);
  CHECK(r.rotation_rmse == 0.0);
}

TEST_CASE("a path shorter than every length has no available rows") {
  std::vector<Mat4> poses;
  for (int i = 0; i < 16; ++i) poses.push_back(at_x(i));
  const auto t = eval::Trajectory::from_poses(poses);
  const auto report = eval::segment_errors(t, t);
  for (const auto& row : report.lengths) CHECK(row.segments == 0);
  CHECK_FALSE(report.t_rel.has_value());
  CHECK(report.to_json().at("t_rel").is_null());
}

TEST_CASE("a single 1 m lateral jump matches the hand count") {
  // The estimate jumps 1 m sideways between frames 49 and 50. A segment of
  // length L starts at s and ends at s + L + 1 (the first frame strictly more
  // than L metres on), so it covers the jump for s in [49 - L, 49] clipped to
  // the valid starts [0, 99 - L].
  const auto gt = straight();
  const auto est = straight(1.0, 50);
  const auto report = eval::segment_errors(est, gt);
  double t_sum = 0.0;
  int available = 0;
  for (const auto& row : report.lengths) {
    const double len = row.length;
    const int count = 100 - static_cast<int>(len);
    if (count <= 0) {
      CHECK(row.segments == 0);
      continue;
    }
    const int l = static_cast<int>(len);
    const int covering = std::min(49, 99 - l) - std::max(0, 49 - l) + 1;
    const double expect = covering * (1.0 / len) / count;
    CHECK(row.segments == count);
    CHECK(std::abs(row.t_err - expect) < 1e-9);
    CHECK(row.r_err == 0.0);
    t_sum += expect;
    ++available;
  }
  CHECK(available == 4);
  CHECK(std::abs(*report.t_rel - t_sum / available) < 1e-9);

  const auto r = eval::rpe(est, gt, 1);
  REQUIRE(r.translation.size() == 100);
  CHECK(r.translation[49] == doctest::Approx(1.0));
  CHECK(r.translation[48] == 0.0);
  CHECK(r.translation_rmse == doctest::Approx(std::sqrt(1.0 / 100.0)));
}

TEST_CASE("metrics are invariant to a common rigid transform") {
  std::mt19937_64 rng(2);
  const auto gt = curvy(rng, 100);
  const auto est = curvy(rng, 100);
  Mat4 g = Mat4::Identity();
  g.topLeftCorner<3, 3>() = testing::random_rotation(rng);
  g.topRightCorner<3, 1>() << 5, -3, 2;
  std::vector<Mat4> gt_moved, est_moved;
  for (size_t i = 0; i < gt.size(); ++i) {
    gt_moved.push_back(g * gt.poses[i]);
    est_moved.push_back(g * est.poses[i]);
  }
  const auto a = eval::segment_errors(est, gt);
  const auto b = eval::segment_errors(eval::Trajectory::from_poses(est_moved),
                                      eval::Trajectory::from_poses(gt_moved));
  for (size_t i = 0; i < a.lengths.size(); ++i) {
    CHECK(a.lengths[i].segments == b.lengths[i].segments);
    CHECK(std::abs(a.lengths[i].t_err - b.lengths[i].t_err) < 1e-9);
    CHECK(std::abs(a.lengths[i].r_err - b.lengths[i].r_err) < 1e-9);
  }
}

TEST_CASE("relative pose error is symmetric in its arguments") {
  std::mt19937_64 rng(3);
  const auto a = curvy(rng, 30);
  const auto b = curvy(rng, 30);
  for (int delta : {1, 5}) {
    const auto ab = eval::rpe(a, b, delta);
    const auto ba = eval::rpe(b, a, delta);
    CHECK(ab.translation.size() == static_cast<size_t>(31 - delta));
    CHECK(ab.translation_rmse == doctest::Approx(ba.translation_rmse));
    CHECK(ab.rotation_rmse == doctest::Approx(ba.rotation_rmse));
  }
  CHECK_THROWS_AS(eval::rpe(a, eval::assemble({}), 1), LengthMismatch);
  CHECK_THROWS_AS(eval::segment_errors(a, eval::assemble({})), LengthMismatch);
}

TEST_CASE("rotation angle covers the full range") {
  CHECK(eval::rotation_angle_deg(geometry::Mat3::Identity()) == 0.0);
  CHECK(eval::rotation_angle_deg(geometry::euler_to_rotation({0.3, 0, 0})) ==
        doctest::Approx(0.3 * 180.0 / std::numbers::pi));
  CHECK(eval::rotation_angle_deg(geometry::euler_to_rotation({std::numbers::pi, 0, 0})) ==
        doctest::Approx(180.0));
}
