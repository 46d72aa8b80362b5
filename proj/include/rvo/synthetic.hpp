#pragma once

// Synthetic radar-camera sequences for desk-scale verification.
//
// The ego vehicle drives on the ground plane. Static world points sit in a
// corridor along its path; dynamic clusters are car-sized boxes translating
// with a constant world velocity along the initial heading. Every visible
// point carries rrv = (v_point - v_ego) . u, where u is the unit ray from the
// sensor to the point, so approaching points have negative rrv.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvo/geometry.hpp"
#include "rvo/image_backbone.hpp"
#include "rvo/pointcloud_ops.hpp"

namespace rvo::synth {

struct SyntheticSceneConfig {
  int frames = 50;
  double dt = 0.1;
  int static_points = 800;
  int dynamic_clusters = 0;
  int cluster_points = 30;
  double dynamic_speed = 9.0;  // world speed of each cluster along the initial heading
  std::string ego_motion = "smooth";  // smooth | forward | static
  double speed = 5.0;
  double speed_amplitude = 1.5;
  double speed_period = 3.0;
  double yaw_rate_amplitude = 0.17;
  double yaw_period = 4.0;
  /// Explicit absolute ego poses (world <- radar), overriding ego_motion when
  /// non-empty. Must hold `frames` entries.
  std::vector<geometry::Pose> trajectory;
  double noise_sigma = 0.0;
  double max_range = 40.0;
  double azimuth_fov_deg = 120.0;
  double elevation_fov_deg = 30.0;
  int image_width = 64;
  int image_height = 64;
  double camera_hfov_deg = 90.0;
  std::string render = "splat";  // splat | background
  uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSceneConfig from_json(const nlohmann::json& j);
};

struct SimFrame {
  geometry::RigidTransform pose;             // world <- radar
  geometry::Vec3 ego_velocity;               // world frame
  pc::Matrix<double> points;                 // N x 5 in the radar frame
  std::vector<geometry::Vec3> world;         // noise-free world positions
  std::vector<geometry::Vec3> velocity;      // world velocity of every point
  std::vector<int32_t> source;               // static point index, or -(cluster + 1)
  std::vector<uint8_t> dynamic;
  model::ImageFrame image;
};

struct SimSequence {
  std::vector<SimFrame> frames;
  geometry::Calibration calib;
  geometry::ImageSize image_size;
  double dt = 0.1;
};

/// Radial velocity of a point at `point` moving with `point_velocity`, seen
/// from a sensor at `sensor` moving with `sensor_velocity`.
double radial_velocity(const geometry::Vec3& point, const geometry::Vec3& point_velocity,
                       const geometry::Vec3& sensor, const geometry::Vec3& sensor_velocity);

/// Camera model used for every synthetic sequence of the given image size.
geometry::Calibration synthetic_calibration(int width, int height, double hfov_deg);

SimSequence simulate(const SyntheticSceneConfig& config);

/// Writes the sequence in the standard dataset layout under `root` as
/// sequence "00", listed in every split, plus root/manifest.json.
void generate_synthetic(const SyntheticSceneConfig& config, const std::filesystem::path& root);

}  // namespace rvo::synth
