#include "rvo/data_io.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rvo/errors.hpp"

namespace rvo::data {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "radar files are little-endian");

std::string frame_name(int index) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << index;
  return s.str();
}

RadarFrame read_radar(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CorruptPointFile("cannot open radar file " + path.string());
  const auto bytes = static_cast<int64_t>(in.tellg());
  constexpr int64_t kPoint = 5 * sizeof(float);
  if (bytes <= 0 || bytes % kPoint != 0) {
    throw CorruptPointFile("radar file " + path.string() + " has " + std::to_string(bytes) +
                           " bytes, not a positive multiple of " + std::to_string(kPoint));
  }
  RadarFrame frame;
  frame.points.resize(bytes / kPoint, 5);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(frame.points.data()), bytes);
  if (!in) throw CorruptPointFile("short read on radar file " + path.string());
  if (!frame.points.allFinite()) throw CorruptPointFile("non-finite values in " + path.string());
  return frame;
}

void write_radar(const fs::path& path, const pc::Matrix<float>& points) {
  if (points.cols() != 5) throw ShapeMismatch("write_radar: expected N x 5 points");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(points.data()),
            static_cast<std::streamsize>(points.size() * sizeof(float)));
}

model::ImageFrame read_image(const fs::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataFormatError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  model::ImageFrame img;
  img.height = rgb.rows;
  img.width = rgb.cols;
  img.pixels.resize(static_cast<size_t>(rgb.rows) * rgb.cols * 3);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<uint8_t>(y);
    for (int x = 0; x < rgb.cols * 3; ++x) {
      img.pixels[static_cast<size_t>(y) * rgb.cols * 3 + x] = static_cast<float>(row[x]) / 255.0f;
    }
  }
  return img;
}

void write_image(const fs::path& path, const model::ImageFrame& image) {
  cv::Mat rgb(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = rgb.ptr<uint8_t>(y);
    for (int x = 0; x < image.width * 3; ++x) {
      const float v = image.pixels[static_cast<size_t>(y) * image.width * 3 + x];
      row[x] = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write image " + path.string());
}

std::vector<uint8_t> read_labels(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open label file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_labels(const fs::path& path, const std::vector<uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

std::vector<std::string> split_sequences(const fs::path& root, const std::string& split) {
  const fs::path path = root / "splits.json";
  std::ifstream in(path);
  if (!in) throw DataFormatError("missing split manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError("cannot parse " + path.string() + ": " + e.what());
  }
  if (!j.contains(split)) throw DataFormatError("split '" + split + "' not in " + path.string());
  try {
    return j.at(split).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError("split '" + split + "' must list sequence ids: " + e.what());
  }
}

namespace {

std::vector<double> read_times(const fs::path& path, size_t count) {
  std::vector<double> times(count);
  for (size_t i = 0; i < count; ++i) times[i] = static_cast<double>(i);
  std::ifstream in(path);
  if (!in) return times;
  std::string line;
  for (size_t i = 0; i < count && std::getline(in, line); ++i) {
    try {
      times[i] = std::stod(line);
    } catch (const std::exception&) {
      throw ParseError(path.string() + ": bad timestamp", static_cast<int>(i + 1));
    }
  }
  return times;
}

}  // namespace

std::vector<SequenceSample> load_sequence_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataFormatError("sequence directory " + dir.string() + " missing");
  const std::string id = dir.filename().string();
  const auto calib = geometry::read_calibration(dir / "calib.json");
  const auto poses = geometry::read_trajectory(dir / "poses.txt");
  const auto times = read_times(dir / "times.txt", poses.size());

  std::vector<std::optional<Frame>> frames(poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    const std::string name = frame_name(static_cast<int>(i));
    const fs::path radar = dir / "radar" / (name + ".bin");
    const fs::path image = dir / "image" / (name + ".png");
    if (!fs::exists(radar) || !fs::exists(image)) {
      spdlog::warn("sequence {}: frame {} is missing radar or image data, skipping", id, name);
      continue;
    }
    Frame f;
    f.sequence = id;
    f.index = static_cast<int>(i);
    f.radar = read_radar(radar);
    f.radar.timestamp = times[i];
    f.image = read_image(image);
    const fs::path labels = dir / "labels" / (name + ".bin");
    if (fs::exists(labels)) {
      f.dynamic = read_labels(labels);
      if (static_cast<Eigen::Index>(f.dynamic.size()) != f.radar.points.rows()) {
        throw DataFormatError("label count differs from point count in " + labels.string());
      }
    }
    frames[i] = std::move(f);
  }

  std::vector<SequenceSample> samples;
  for (size_t i = 0; i + 1 < frames.size(); ++i) {
    if (!frames[i] || !frames[i + 1]) continue;
    SequenceSample s;
    s.first = *frames[i];
    s.second = *frames[i + 1];
    s.calib = calib;
    const geometry::RigidTransform t1 = geometry::RigidTransform::from_matrix(poses[i]);
    const geometry::RigidTransform t2 = geometry::RigidTransform::from_matrix(poses[i + 1]);
    s.gt_relative = geometry::to_pose(t1.inverse() * t2);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<SequenceSample> load_sequence(const fs::path& root, const std::string& split) {
  std::vector<SequenceSample> all;
  for (const auto& id : split_sequences(root, split)) {
    auto part = load_sequence_dir(root / "sequences" / id);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

std::vector<int32_t> sample_indices(int64_t n_raw, int64_t n, uint64_t seed) {
  if (n < 1 || n_raw < 1) throw CountOutOfRange("sample_indices: counts must be >= 1");
  if (n_raw < n) return pc::cycle_indices(n_raw, n);
  std::vector<int32_t> all(static_cast<size_t>(n_raw));
  std::iota(all.begin(), all.end(), 0);
  if (n_raw == n) return all;
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates, then restore the original order of the kept points.
  for (int64_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<int64_t> pick(i, n_raw - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(static_cast<size_t>(n));
  std::sort(all.begin(), all.end());
  return all;
}

template <typename T>
pc::Matrix<T> sample_to_n(const pc::Matrix<float>& points, int64_t n, uint64_t seed) {
  const auto idx = sample_indices(points.rows(), n, seed);
  pc::Matrix<T> out(n, points.cols());
  for (int64_t i = 0; i < n; ++i) out.row(i) = points.row(idx[i]).template cast<T>();
  return out;
}

uint64_t frame_seed(uint64_t seed, const std::string& sequence, int index) {
  // FNV-1a over the sequence id, mixed with the frame index and run seed.
  uint64_t h = 1469598103934665603ull;
  for (char c : sequence) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  h ^= static_cast<uint64_t>(index) + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2);
  return std::mt19937_64(h)();
}

template pc::Matrix<float> sample_to_n<float>(const pc::Matrix<float>&, int64_t, uint64_t);
template pc::Matrix<double> sample_to_n<double>(const pc::Matrix<float>&, int64_t, uint64_t);

}  // namespace rvo::data
