#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "recnet/point_cloud.hpp"

namespace recnet {

// Spherical projection parameters. Angles are radians; f_up and f_down are
// both positive magnitudes measured from the horizon, so the total vertical
// field of view is f_up + f_down.
struct ProjectionConfig {
  int width = 900;
  int height = 64;
  double fov_up = 0.0;
  double fov_down = 0.0;
  double min_range = 0.0;
  double max_range = 0.0;

  double fov() const { return fov_up + fov_down; }

  // Throws ConfigError unless: width >= 1, height >= 1, fov > 0,
  // 0 <= min_range < max_range.
  void validate() const;

  bool operator==(const ProjectionConfig&) const = default;
};

// 64-beam spinning-lidar profile: 900x64, +3 deg up, -25 deg down, 2..80 m.
ProjectionConfig kitti_hdl64_config();

// 32-beam profile: 450x32, symmetric +/-16.6 deg, 1..50 m.
ProjectionConfig os1_32_config();

// Range image: row-major height x width grid of ranges in meters.
// 0 encodes "no return"; every nonzero cell lies in [min_range, max_range].
struct RangeImage {
  ProjectionConfig config;
  std::vector<float> data;  // height * width, row-major

  RangeImage() = default;
  explicit RangeImage(const ProjectionConfig& cfg)
      : config(cfg),
        data(static_cast<std::size_t>(cfg.height) * cfg.width, 0.0f) {}

  float& at(int v, int u) {
    return data[static_cast<std::size_t>(v) * config.width + u];
  }
  float at(int v, int u) const {
    return data[static_cast<std::size_t>(v) * config.width + u];
  }
};

// Projects a cloud onto the spherical grid:
//   r = |p|,  u = 1/2 [1 - atan2(y,x)/pi] w,  v = [1 - (asin(z/r)+f_up)/f] h
// with floor() to pixel indices and u == w wrapping to column 0. Points are
// discarded when r falls outside [min_range, max_range] or the row index
// leaves [0, h). Collisions keep the nearest point; exact range ties keep
// the first-seen point.
RangeImage project(const PointCloud& cloud, const ProjectionConfig& config);

// Inverse mapping using pixel centers:
//   yaw   = pi (1 - 2 (u + 1/2) / w)
//   pitch = (1 - (v + 1/2) / h) f - f_up
//   p     = (r cos(pitch) cos(yaw), r cos(pitch) sin(yaw), r sin(pitch))
// Pixels with range below min_range (including empty ones) are skipped.
PointCloud unproject(const RangeImage& image);

// (radians per column, radians per row) = (2 pi / w, f / h).
std::pair<double, double> angular_resolution(const ProjectionConfig& config);

// Range-image container format; see README for the byte layout.
void write_range_image(const RangeImage& image, const std::string& path);
RangeImage read_range_image(const std::string& path);

void write_range_image(const RangeImage& image, std::ostream& os);
RangeImage read_range_image(std::istream& is);

}  // namespace recnet
