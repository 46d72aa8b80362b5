#include "rvo/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rvo/errors.hpp"

namespace rvo::plot {

namespace {

const cv::Scalar kPalette[] = {{40, 40, 220}, {200, 120, 30}, {40, 160, 40}, {160, 40, 160}};

struct Frame {
  double min_x, min_y, scale;
  int margin, size;

  cv::Point to_pixel(double x, double y) const {
    return {margin + static_cast<int>(std::lround((x - min_x) * scale)),
            size - margin - static_cast<int>(std::lround((y - min_y) * scale))};
  }
};

Frame fit(double min_x, double max_x, double min_y, double max_y, int size) {
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-3});
  const int margin = 50;
  const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
  return {cx - 0.5 * span, cy - 0.5 * span, (size - 2 * margin) / span, margin, size};
}

void write(const cv::Mat& img, const std::filesystem::path& out) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  if (!cv::imwrite(out.string(), img)) throw Error("cannot write plot " + out.string());
}

void draw_scale_bar(cv::Mat& img, const Frame& f) {
  const double span = (f.size - 2 * f.margin) / f.scale;
  const double step = std::pow(10.0, std::floor(std::log10(span / 2.0)));
  const int px = static_cast<int>(step * f.scale);
  const cv::Point a(f.margin, f.size - 20), b(f.margin + px, f.size - 20);
  cv::line(img, a, b, {0, 0, 0}, 2);
  char label[32];
  std::snprintf(label, sizeof(label), "%g m", step);
  cv::putText(img, label, b + cv::Point(8, 5), cv::FONT_HERSHEY_SIMPLEX, 0.5, {0, 0, 0}, 1);
}

}  // namespace

void trajectory_xy(const std::vector<Series>& series, const std::filesystem::path& out, int size) {
  double min_x = std::numeric_limits<double>::max(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  for (const auto& s : series) {
    for (const auto& p : s.poses) {
      min_x = std::min(min_x, p(0, 3));
      max_x = std::max(max_x, p(0, 3));
      min_y = std::min(min_y, p(1, 3));
      max_y = std::max(max_y, p(1, 3));
    }
  }
  if (min_x > max_x) throw Error("trajectory_xy: no poses to plot");
  const Frame f = fit(min_x, max_x, min_y, max_y, size);
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  for (size_t i = 0; i < series.size(); ++i) {
    const cv::Scalar color = kPalette[i % std::size(kPalette)];
    std::vector<cv::Point> pts;
    for (const auto& p : series[i].poses) pts.push_back(f.to_pixel(p(0, 3), p(1, 3)));
    cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
    if (!pts.empty()) cv::circle(img, pts.front(), 5, color, cv::FILLED);
    cv::putText(img, series[i].label, {20, 30 + 22 * static_cast<int>(i)}, cv::FONT_HERSHEY_SIMPLEX,
                0.6, color, 2);
  }
  draw_scale_bar(img, f);
  write(img, out);
}

void confidence_scatter(const geometry::Points3d& points, const std::vector<double>& confidence,
                        const std::filesystem::path& out, int size) {
  if (static_cast<size_t>(points.rows()) != confidence.size() || points.rows() == 0) {
    throw ShapeMismatch("confidence_scatter: need one confidence per point");
  }
  // Radar frame: x forward (drawn upwards), y left (drawn leftwards).
  const double max_x = std::max(points.col(0).maxCoeff(), 1.0);
  const double min_x = std::min(points.col(0).minCoeff(), 0.0);
  const double ext_y = std::max(points.col(1).cwiseAbs().maxCoeff(), 1.0);
  const Frame f = fit(-ext_y, ext_y, min_x, max_x, size);
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(255, 255, 255));
  const double lo = *std::min_element(confidence.begin(), confidence.end());
  const double hi = *std::max_element(confidence.begin(), confidence.end());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const double a = hi > lo ? (confidence[i] - lo) / (hi - lo) : 0.5;
    const cv::Scalar color(255.0 * (1.0 - a), 40.0, 255.0 * a);
    cv::circle(img, f.to_pixel(-points(i, 1), points(i, 0)), 4, color, cv::FILLED, cv::LINE_AA);
  }
  cv::drawMarker(img, f.to_pixel(0.0, 0.0), {0, 0, 0}, cv::MARKER_TRIANGLE_UP, 14, 2);
  char label[64];
  std::snprintf(label, sizeof(label), "confidence %.3f (blue) .. %.3f (red)", lo, hi);
  cv::putText(img, label, {20, 30}, cv::FONT_HERSHEY_SIMPLEX, 0.55, {0, 0, 0}, 1);
  draw_scale_bar(img, f);
  write(img, out);
}

}  // namespace rvo::plot
