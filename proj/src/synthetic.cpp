#include "rvo/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "rvo/data_io.hpp"
#include "rvo/errors.hpp"

namespace rvo::synth {

namespace fs = std::filesystem;
using geometry::Mat3;
using geometry::Vec3;
using nlohmann::json;

namespace {

constexpr double kGroundHeight = -1.5;
constexpr int kSubsteps = 200;
constexpr int kClumpSize = 8;
const Vec3 kCameraOffset(0.0, 0.0, 0.3);  // camera center in the radar frame

Vec3 pose_position(const geometry::Pose& p) { return p.t; }

Mat3 yaw_rotation(double yaw) { return geometry::euler_to_rotation(Vec3(yaw, 0.0, 0.0)); }

struct EgoState {
  geometry::RigidTransform pose;
  Vec3 velocity = Vec3::Zero();
};

double smooth_speed(const SyntheticSceneConfig& c, double t) {
  return c.speed + c.speed_amplitude * std::sin(2.0 * std::numbers::pi * t / c.speed_period);
}

double smooth_yaw(const SyntheticSceneConfig& c, double t) {
  const double w = 2.0 * std::numbers::pi / c.yaw_period;
  return c.yaw_rate_amplitude / w * (1.0 - std::cos(w * t));
}

std::vector<EgoState> ego_states(const SyntheticSceneConfig& c) {
  std::vector<EgoState> states(static_cast<size_t>(c.frames));
  if (!c.trajectory.empty()) {
    for (int i = 0; i < c.frames; ++i) states[i].pose = geometry::to_transform(c.trajectory[i]);
    for (int i = 0; i < c.frames; ++i) {
      const int a = std::max(i - 1, 0), b = std::min(i + 1, c.frames - 1);
      states[i].velocity = (pose_position(c.trajectory[b]) - pose_position(c.trajectory[a])) /
                           (static_cast<double>(b - a) * c.dt);
    }
    return states;
  }
  if (c.ego_motion == "static") return states;
  if (c.ego_motion == "forward") {
    for (int i = 0; i < c.frames; ++i) {
      states[i].pose.t = Vec3(c.speed * c.dt * i, 0.0, 0.0);
      states[i].velocity = Vec3(c.speed, 0.0, 0.0);
    }
    return states;
  }
  Vec3 position = Vec3::Zero();
  for (int i = 0; i < c.frames; ++i) {
    const double t = c.dt * i;
    const double yaw = smooth_yaw(c, t);
    states[i].pose = {yaw_rotation(yaw), position};
    states[i].velocity = smooth_speed(c, t) * Vec3(std::cos(yaw), std::sin(yaw), 0.0);
    // Midpoint integration up to the next frame.
    const double h = c.dt / kSubsteps;
    for (int s = 0; s < kSubsteps; ++s) {
      const double tm = t + (s + 0.5) * h;
      const double ym = smooth_yaw(c, tm);
      position += h * smooth_speed(c, tm) * Vec3(std::cos(ym), std::sin(ym), 0.0);
    }
  }
  return states;
}

/// Polyline through the ego positions, extended behind the start and past the
/// end so the corridor covers everything the sensor can see.
struct Corridor {
  std::vector<Vec3> points;
  std::vector<double> arclength;

  void at(double s, Vec3& position, Vec3& direction) const {
    const auto it = std::upper_bound(arclength.begin(), arclength.end(), s);
    const size_t i = std::clamp<size_t>(static_cast<size_t>(it - arclength.begin()), 1, points.size() - 1);
    const double seg = arclength[i] - arclength[i - 1];
    const double a = seg > 0 ? (s - arclength[i - 1]) / seg : 0.0;
    position = points[i - 1] + a * (points[i] - points[i - 1]);
    direction = (points[i] - points[i - 1]).normalized();
  }
};

Corridor build_corridor(const std::vector<EgoState>& ego, double ahead) {
  Corridor c;
  const Vec3 first_dir = ego.front().pose.R.col(0);
  const Vec3 last_dir = ego.back().pose.R.col(0);
  c.points.push_back(ego.front().pose.t - 15.0 * first_dir);
  for (const auto& e : ego) {
    if ((e.pose.t - c.points.back()).norm() > 1e-6) c.points.push_back(e.pose.t);
  }
  c.points.push_back(ego.back().pose.t + (ahead + 10.0) * last_dir);
  c.arclength.push_back(0.0);
  for (size_t i = 1; i < c.points.size(); ++i) {
    c.arclength.push_back(c.arclength.back() + (c.points[i] - c.points[i - 1]).norm());
  }
  return c;
}

struct Cluster {
  Vec3 center;
  Vec3 velocity;
  std::vector<Vec3> offsets;
  std::vector<double> intensity;
};

Vec3 box_surface_point(std::mt19937_64& rng, const Vec3& half) {
  const double ax = half.y() * half.z(), ay = half.x() * half.z(), az = half.x() * half.y();
  std::uniform_real_distribution<double> u(-1.0, 1.0), pick(0.0, ax + ay + az);
  std::bernoulli_distribution side(0.5);
  Vec3 p(u(rng) * half.x(), u(rng) * half.y(), u(rng) * half.z());
  const double f = pick(rng);
  const double sign = side(rng) ? 1.0 : -1.0;
  if (f < ax) {
    p.x() = sign * half.x();
  } else if (f < ax + ay) {
    p.y() = sign * half.y();
  } else {
    p.z() = sign * half.z();
  }
  return p;
}

void render_background(model::ImageFrame& img, const geometry::Calibration& calib,
                       const geometry::RigidTransform& pose) {
  const Mat3 R_cr = calib.T_cr.topLeftCorner<3, 3>();
  const Mat3 K_inv = calib.K.inverse();
  const Vec3 origin = pose.R * kCameraOffset + pose.t;
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      const Vec3 ray_c = K_inv * Vec3(u + 0.5, v + 0.5, 1.0);
      const Vec3 d = (pose.R * (R_cr.transpose() * ray_c)).normalized();
      float* px = img.pixels.data() + (static_cast<size_t>(v) * img.width + u) * 3;
      if (d.z() < -1e-3) {
        const double s = (kGroundHeight - origin.z()) / d.z();
        const Vec3 q = origin + s * d;
        const double g = 0.5 + 0.25 * std::sin(1.3 * q.x()) * std::sin(1.3 * q.y()) +
                         0.15 * std::sin(0.37 * q.x() + 0.21 * q.y());
        const double fade = std::exp(-s / 60.0);
        px[0] = static_cast<float>(0.25 + fade * (0.45 * g - 0.05));
        px[1] = static_cast<float>(0.22 + fade * 0.40 * g);
        px[2] = static_cast<float>(0.18 + fade * 0.30 * g);
      } else {
        const double az = std::atan2(d.y(), d.x());
        const double el = std::asin(std::clamp(d.z(), -1.0, 1.0));
        px[0] = static_cast<float>(0.55 + 0.15 * std::sin(6.0 * az) - 0.2 * el);
        px[1] = static_cast<float>(0.65 + 0.10 * std::cos(9.0 * az + 1.0) - 0.2 * el);
        px[2] = static_cast<float>(0.85 - 0.30 * el + 0.05 * std::sin(17.0 * az));
      }
    }
  }
}

void render_splats(model::ImageFrame& img, const geometry::Calibration& calib,
                   const geometry::Points3d& points, const std::vector<double>& intensity) {
  const auto proj = geometry::project_points(points, calib, {img.width, img.height});
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (proj.valid[i]) order.push_back(i);
  }
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return proj.depth[a] > proj.depth[b]; });
  cv::Mat canvas(img.height, img.width, CV_32FC3, img.pixels.data());
  for (Eigen::Index i : order) {
    const double w = intensity[i];
    const int radius = proj.depth[i] < 8.0 ? 2 : 1;
    cv::circle(canvas, cv::Point(static_cast<int>(proj.uv(i, 0)), static_cast<int>(proj.uv(i, 1))),
               radius, cv::Scalar(0.2 + 0.8 * w, 0.9 - 0.6 * w, 0.3 + 0.5 * (1.0 - w)), cv::FILLED,
               cv::LINE_8);
  }
}

Vec3 read_vec3(const json& j, const std::string& key) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError(key + ": expected 3 numbers");
  return {v[0], v[1], v[2]};
}

}  // namespace

double radial_velocity(const Vec3& point, const Vec3& point_velocity, const Vec3& sensor,
                       const Vec3& sensor_velocity) {
  const Vec3 ray = point - sensor;
  const double r = ray.norm();
  if (r == 0.0) return 0.0;
  return (point_velocity - sensor_velocity).dot(ray / r);
}

geometry::Calibration synthetic_calibration(int width, int height, double hfov_deg) {
  geometry::Calibration c;
  const double f = 0.5 * width / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
  c.K << f, 0, 0.5 * width, 0, f, 0.5 * height, 0, 0, 1;
  Mat3 R_cr;
  R_cr << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  c.T_cr.setIdentity();
  c.T_cr.topLeftCorner<3, 3>() = R_cr;
  c.T_cr.topRightCorner<3, 1>() = -R_cr * kCameraOffset;
  return c;
}

void SyntheticSceneConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("synthetic." + field + ": " + why);
  };
  if (frames < 2) fail("frames", "must be >= 2");
  if (!(dt > 0)) fail("dt", "must be positive");
  if (static_points < 0) fail("static_points", "must be >= 0");
  if (dynamic_clusters < 0) fail("dynamic_clusters", "must be >= 0");
  if (cluster_points < 0) fail("cluster_points", "must be >= 0");
  if (!std::isfinite(dynamic_speed)) fail("dynamic_speed", "must be finite");
  if (ego_motion != "smooth" && ego_motion != "forward" && ego_motion != "static") {
    fail("ego_motion", "must be smooth, forward or static");
  }
  if (!(speed_period > 0)) fail("speed_period", "must be positive");
  if (!(yaw_period > 0)) fail("yaw_period", "must be positive");
  if (!trajectory.empty() && static_cast<int>(trajectory.size()) != frames) {
    fail("trajectory", "must hold one pose per frame");
  }
  if (!(noise_sigma >= 0)) fail("noise_sigma", "must be >= 0");
  if (!(max_range > 0.5)) fail("max_range", "must exceed 0.5");
  if (!(azimuth_fov_deg > 0 && azimuth_fov_deg <= 360)) fail("azimuth_fov_deg", "must be in (0, 360]");
  if (!(elevation_fov_deg > 0 && elevation_fov_deg <= 180)) {
    fail("elevation_fov_deg", "must be in (0, 180]");
  }
  if (image_width < 1 || image_height < 1) fail("image_width/image_height", "must be positive");
  if (!(camera_hfov_deg > 0 && camera_hfov_deg < 180)) fail("camera_hfov_deg", "must be in (0, 180)");
  if (render != "splat" && render != "background") fail("render", "must be splat or background");
}

json SyntheticSceneConfig::to_json() const {
  json traj = json::array();
  for (const auto& p : trajectory) {
    traj.push_back({{"eula", {p.eula.x(), p.eula.y(), p.eula.z()}}, {"t", {p.t.x(), p.t.y(), p.t.z()}}});
  }
  return {{"frames", frames},
          {"dt", dt},
          {"static_points", static_points},
          {"dynamic_clusters", dynamic_clusters},
          {"cluster_points", cluster_points},
          {"dynamic_speed", dynamic_speed},
          {"ego_motion", ego_motion},
          {"speed", speed},
          {"speed_amplitude", speed_amplitude},
          {"speed_period", speed_period},
          {"yaw_rate_amplitude", yaw_rate_amplitude},
          {"yaw_period", yaw_period},
          {"trajectory", traj},
          {"noise_sigma", noise_sigma},
          {"max_range", max_range},
          {"azimuth_fov_deg", azimuth_fov_deg},
          {"elevation_fov_deg", elevation_fov_deg},
          {"image_width", image_width},
          {"image_height", image_height},
          {"camera_hfov_deg", camera_hfov_deg},
          {"render", render},
          {"seed", seed}};
}

SyntheticSceneConfig SyntheticSceneConfig::from_json(const json& j) {
  SyntheticSceneConfig c;
  if (!j.is_object()) throw ConfigError("synthetic config must be an object");
  std::map<std::string, std::function<void(const json&)>> fields;
#define RVO_SYN(name) fields[#name] = [&](const json& v) { c.name = v.get<decltype(c.name)>(); }
  RVO_SYN(frames);
  RVO_SYN(dt);
  RVO_SYN(static_points);
  RVO_SYN(dynamic_clusters);
  RVO_SYN(cluster_points);
  RVO_SYN(dynamic_speed);
  RVO_SYN(ego_motion);
  RVO_SYN(speed);
  RVO_SYN(speed_amplitude);
  RVO_SYN(speed_period);
  RVO_SYN(yaw_rate_amplitude);
  RVO_SYN(yaw_period);
  RVO_SYN(noise_sigma);
  RVO_SYN(max_range);
  RVO_SYN(azimuth_fov_deg);
  RVO_SYN(elevation_fov_deg);
  RVO_SYN(image_width);
  RVO_SYN(image_height);
  RVO_SYN(camera_hfov_deg);
  RVO_SYN(render);
  RVO_SYN(seed);
#undef RVO_SYN
  fields["trajectory"] = [&](const json& v) {
    for (const auto& p : v) c.trajectory.push_back({read_vec3(p.at("eula"), "trajectory.eula"),
                                                    read_vec3(p.at("t"), "trajectory.t")});
  };
  for (const auto& [key, value] : j.items()) {
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown synthetic config key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ConfigError("synthetic." + key + ": " + e.what());
    }
  }
  return c;
}

SimSequence simulate(const SyntheticSceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const auto ego = ego_states(config);
  const auto corridor = build_corridor(ego, config.max_range);

  // Static corridor: clumps of points on both sides of the path.
  std::vector<Vec3> static_world;
  std::vector<double> static_intensity;
  {
    std::uniform_real_distribution<double> along(0.0, corridor.arclength.back());
    std::uniform_real_distribution<double> lateral(3.0, 15.0), height(-1.0, 3.0), jitter(-0.4, 0.4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution side(0.5);
    while (static_cast<int>(static_world.size()) < config.static_points) {
      Vec3 base, dir;
      corridor.at(along(rng), base, dir);
      const Vec3 left(-dir.y(), dir.x(), 0.0);
      const Vec3 center = base + (side(rng) ? 1.0 : -1.0) * lateral(rng) * left +
                          Vec3(0.0, 0.0, height(rng));
      for (int k = 0; k < kClumpSize && static_cast<int>(static_world.size()) < config.static_points; ++k) {
        static_world.push_back(center + Vec3(jitter(rng), jitter(rng), jitter(rng)));
        static_intensity.push_back(unit(rng));
      }
    }
  }

  std::vector<Cluster> clusters;
  {
    const Vec3 heading = ego.front().pose.R.col(0);
    const Vec3 left(-heading.y(), heading.x(), 0.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int c = 0; c < config.dynamic_clusters; ++c) {
      Cluster cl;
      cl.center = ego.front().pose.t + (10.0 + 5.0 * c) * heading + (c % 2 ? -2.5 : 2.5) * left +
                  Vec3(0.0, 0.0, 0.25);
      cl.velocity = config.dynamic_speed * heading;
      const Mat3 R = ego.front().pose.R;
      for (int k = 0; k < config.cluster_points; ++k) {
        cl.offsets.push_back(R * box_surface_point(rng, Vec3(2.0, 0.9, 0.75)));
        cl.intensity.push_back(unit(rng));
      }
      clusters.push_back(std::move(cl));
    }
  }

  SimSequence seq;
  seq.dt = config.dt;
  seq.calib = synthetic_calibration(config.image_width, config.image_height, config.camera_hfov_deg);
  seq.image_size = {config.image_width, config.image_height};
  const double half_az = 0.5 * config.azimuth_fov_deg * std::numbers::pi / 180.0;
  const double half_el = 0.5 * config.elevation_fov_deg * std::numbers::pi / 180.0;
  std::normal_distribution<double> noise(0.0, 1.0);

  for (int f = 0; f < config.frames; ++f) {
    SimFrame frame;
    frame.pose = ego[f].pose;
    frame.ego_velocity = ego[f].velocity;
    const double t = config.dt * f;
    std::vector<double> intensity;
    auto consider = [&](const Vec3& world, const Vec3& velocity, int32_t source, double inten) {
      const Vec3 local = frame.pose.R.transpose() * (world - frame.pose.t);
      const double r = local.norm();
      if (r < 0.5 || r > config.max_range) return;
      if (std::abs(std::atan2(local.y(), local.x())) > half_az) return;
      if (std::abs(std::asin(local.z() / r)) > half_el) return;
      frame.world.push_back(world);
      frame.velocity.push_back(velocity);
      frame.source.push_back(source);
      frame.dynamic.push_back(source < 0 ? 1 : 0);
      intensity.push_back(inten);
    };
    for (size_t i = 0; i < static_world.size(); ++i) {
      consider(static_world[i], Vec3::Zero(), static_cast<int32_t>(i), static_intensity[i]);
    }
    for (size_t c = 0; c < clusters.size(); ++c) {
      const Vec3 center = clusters[c].center + t * clusters[c].velocity;
      for (size_t k = 0; k < clusters[c].offsets.size(); ++k) {
        consider(center + clusters[c].offsets[k], clusters[c].velocity, -static_cast<int32_t>(c + 1),
                 clusters[c].intensity[k]);
      }
    }
    if (frame.world.empty()) {
      throw ConfigError("synthetic: frame " + std::to_string(f) + " sees no points");
    }

    const auto n = static_cast<Eigen::Index>(frame.world.size());
    frame.points.resize(n, 5);
    geometry::Points3d clean(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 local = frame.pose.R.transpose() * (frame.world[i] - frame.pose.t);
      clean.row(i) = local.transpose();
      for (int d = 0; d < 3; ++d) frame.points(i, d) = local[d] + config.noise_sigma * noise(rng);
      frame.points(i, 3) = radial_velocity(frame.world[i], frame.velocity[i], frame.pose.t,
                                           frame.ego_velocity);
      frame.points(i, 4) = intensity[i];
    }

    frame.image.height = config.image_height;
    frame.image.width = config.image_width;
    frame.image.pixels.assign(static_cast<size_t>(config.image_height) * config.image_width * 3, 0.0f);
    render_background(frame.image, seq.calib, frame.pose);
    if (config.render == "splat") render_splats(frame.image, seq.calib, clean, intensity);
    for (auto& p : frame.image.pixels) p = std::clamp(p, 0.0f, 1.0f);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

void generate_synthetic(const SyntheticSceneConfig& config, const fs::path& root) {
  const auto seq = simulate(config);
  const fs::path dir = root / "sequences" / "00";
  fs::create_directories(dir / "radar");
  fs::create_directories(dir / "image");
  fs::create_directories(dir / "labels");
  std::vector<geometry::Mat4> poses;
  std::ofstream times(dir / "times.txt");
  times.precision(17);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    const auto& f = seq.frames[i];
    const std::string name = data::frame_name(static_cast<int>(i));
    data::write_radar(dir / "radar" / (name + ".bin"), f.points.cast<float>());
    data::write_image(dir / "image" / (name + ".png"), f.image);
    data::write_labels(dir / "labels" / (name + ".bin"), f.dynamic);
    poses.push_back(f.pose.matrix());
    times << seq.dt * static_cast<double>(i) << '\n';
  }
  geometry::write_trajectory(dir / "poses.txt", poses);
  geometry::write_calibration(dir / "calib.json", seq.calib);
  const json splits = {{"train", {"00"}}, {"val", {"00"}}, {"test", {"00"}}};
  std::ofstream(root / "splits.json") << splits.dump(2) << '\n';
  const json manifest = {{"generator", config.to_json()},
                         {"sequences", {"00"}},
                         {"frames", config.frames},
                         {"dynamic_clusters", config.dynamic_clusters}};
  std::ofstream(root / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace rvo::synth
