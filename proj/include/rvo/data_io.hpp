#pragma once

// Dataset layout:
//   root/splits.json                      {"train": ["00", ...], "val": [...], ...}
//   root/sequences/<id>/radar/<frame>.bin little-endian float32, 5 per point
//   root/sequences/<id>/image/<frame>.png 8-bit RGB
//   root/sequences/<id>/calib.json
//   root/sequences/<id>/poses.txt         absolute radar poses, one line per frame
//   root/sequences/<id>/times.txt         optional, one timestamp per frame
//   root/sequences/<id>/labels/<frame>.bin optional uint8 per point, 1 = dynamic
//
// Relative ground truth for a pair (i, i+1) is inv(T_i) * T_{i+1}: it maps
// points of the second frame into the first frame.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rvo/geometry.hpp"
#include "rvo/image_backbone.hpp"
#include "rvo/pointcloud_ops.hpp"

namespace rvo::data {

struct RadarFrame {
  pc::Matrix<float> points;  // N x 5: x, y, z, rrv, intensity
  double timestamp = 0.0;
};

struct Frame {
  std::string sequence;
  int index = 0;
  RadarFrame radar;
  model::ImageFrame image;
  std::vector<uint8_t> dynamic;  // empty when no labels are stored
};

struct SequenceSample {
  Frame first;
  Frame second;
  geometry::Calibration calib;
  geometry::Pose gt_relative;
};

std::string frame_name(int index);

RadarFrame read_radar(const std::filesystem::path& path);
void write_radar(const std::filesystem::path& path, const pc::Matrix<float>& points);
model::ImageFrame read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const model::ImageFrame& image);
std::vector<uint8_t> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<uint8_t>& labels);

/// Sequence ids listed for `split` in root/splits.json.
std::vector<std::string> split_sequences(const std::filesystem::path& root, const std::string& split);

/// Consecutive-frame pairs of one sequence directory. Frames with missing
/// radar or image files are skipped with a warning, as are pairs touching
/// them.
std::vector<SequenceSample> load_sequence_dir(const std::filesystem::path& dir);

/// Every pair of every sequence in the split, in manifest order.
std::vector<SequenceSample> load_sequence(const std::filesystem::path& root, const std::string& split);

/// Indices that bring a frame of n_raw points to exactly n: a sorted uniform
/// subset without replacement when n_raw >= n (seeded), cycling otherwise.
std::vector<int32_t> sample_indices(int64_t n_raw, int64_t n, uint64_t seed);

template <typename T>
pc::Matrix<T> sample_to_n(const pc::Matrix<float>& points, int64_t n, uint64_t seed);

/// Seed used for a frame's point subset, so a frame shared by two pairs is
/// sampled identically in both.
uint64_t frame_seed(uint64_t seed, const std::string& sequence, int index);

}  // namespace rvo::data
