#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rvo/geometry.hpp"

namespace rvo::plot {

struct Series {
  std::string label;
  std::vector<geometry::Mat4> poses;
};

/// Top-down XY projection of one or more trajectories on a shared scale.
void trajectory_xy(const std::vector<Series>& series, const std::filesystem::path& out,
                   int size = 800);

/// Bird's-eye scatter of points coloured by confidence (blue low, red high).
void confidence_scatter(const geometry::Points3d& points, const std::vector<double>& confidence,
                        const std::filesystem::path& out, int size = 800);

}  // namespace rvo::plot
