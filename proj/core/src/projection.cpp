#include "recnet/projection.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "recnet/detail/binary.hpp"
#include "recnet/errors.hpp"

namespace recnet {

namespace {
constexpr double kPi = std::numbers::pi;
constexpr char kRangeImageMagic[4] = {'R', 'I', 'M', 'G'};
constexpr std::uint16_t kRangeImageVersion = 1;

double deg(double d) { return d * kPi / 180.0; }
}  // namespace

void ProjectionConfig::validate() const {
  if (width < 1 || height < 1) {
    throw ConfigError("projection grid must be at least 1x1, got " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  if (!(fov() > 0.0)) {
    throw ConfigError("vertical field of view must be positive, got " +
                      std::to_string(fov()) + " rad");
  }
  if (!(min_range >= 0.0) || !(min_range < max_range)) {
    throw ConfigError("range bounds must satisfy 0 <= min < max, got [" +
                      std::to_string(min_range) + ", " +
                      std::to_string(max_range) + "]");
  }
}

ProjectionConfig kitti_hdl64_config() {
  ProjectionConfig cfg;
  cfg.width = 900;
  cfg.height = 64;
  cfg.fov_up = deg(3.0);
  cfg.fov_down = deg(25.0);
  cfg.min_range = 2.0;
  cfg.max_range = 80.0;
  return cfg;
}

ProjectionConfig os1_32_config() {
  ProjectionConfig cfg;
  cfg.width = 450;
  cfg.height = 32;
  cfg.fov_up = deg(16.6);
  cfg.fov_down = deg(16.6);
  cfg.min_range = 1.0;
  cfg.max_range = 50.0;
  return cfg;
}

RangeImage project(const PointCloud& cloud, const ProjectionConfig& config) {
  config.validate();
  RangeImage image(config);

  const double w = config.width;
  const double h = config.height;
  const double f = config.fov();

  for (const Point3& p : cloud.points) {
    const double x = p.x, y = p.y, z = p.z;
    const double r = std::sqrt(x * x + y * y + z * z);
    if (!(r > 0.0) || r < config.min_range || r > config.max_range) continue;

    const double u = 0.5 * (1.0 - std::atan2(y, x) / kPi) * w;
    const double v = (1.0 - (std::asin(z / r) + config.fov_up) / f) * h;

    int ui = static_cast<int>(std::floor(u));
    const int vi = static_cast<int>(std::floor(v));
    if (ui == config.width) ui = 0;  // atan2 == -pi lands exactly on the seam
    if (ui < 0 || ui >= config.width || vi < 0 || vi >= config.height)
      continue;

    const float rf = static_cast<float>(r);
    float& cell = image.at(vi, ui);
    if (cell == 0.0f || rf < cell) cell = rf;
  }
  return image;
}

PointCloud unproject(const RangeImage& image) {
  const ProjectionConfig& cfg = image.config;
  cfg.validate();

  const double w = cfg.width;
  const double h = cfg.height;
  const double f = cfg.fov();

  PointCloud cloud;
  for (int v = 0; v < cfg.height; ++v) {
    for (int u = 0; u < cfg.width; ++u) {
      const float range = image.at(v, u);
      if (!(range > 0.0f) || range < cfg.min_range) continue;
      const double r = range;
      const double yaw = kPi * (1.0 - 2.0 * (u + 0.5) / w);
      const double pitch = (1.0 - (v + 0.5) / h) * f - cfg.fov_up;
      const double cp = std::cos(pitch);
      cloud.points.push_back({static_cast<float>(r * cp * std::cos(yaw)),
                              static_cast<float>(r * cp * std::sin(yaw)),
                              static_cast<float>(r * std::sin(pitch))});
    }
  }
  return cloud;
}

std::pair<double, double> angular_resolution(const ProjectionConfig& config) {
  config.validate();
  return {2.0 * kPi / config.width, config.fov() / config.height};
}

void write_range_image(const RangeImage& image, std::ostream& os) {
  const ProjectionConfig& cfg = image.config;
  cfg.validate();
  detail::write_magic(os, kRangeImageMagic);
  detail::write_le<std::uint16_t>(os, kRangeImageVersion);
  detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(cfg.height));
  detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(cfg.width));
  detail::write_le<float>(os, static_cast<float>(cfg.fov_up));
  detail::write_le<float>(os, static_cast<float>(cfg.fov_down));
  detail::write_le<float>(os, static_cast<float>(cfg.min_range));
  detail::write_le<float>(os, static_cast<float>(cfg.max_range));
  detail::write_f32_array(os, image.data.data(), image.data.size());
}

RangeImage read_range_image(std::istream& is) {
  detail::expect_magic(is, kRangeImageMagic, "range image");
  const auto version = detail::read_le<std::uint16_t>(is, "range image header");
  if (version != kRangeImageVersion) {
    throw FormatError("unsupported range-image version " +
                      std::to_string(version));
  }
  ProjectionConfig cfg;
  cfg.height = detail::read_le<std::uint16_t>(is, "range image header");
  cfg.width = detail::read_le<std::uint16_t>(is, "range image header");
  cfg.fov_up = detail::read_le<float>(is, "range image header");
  cfg.fov_down = detail::read_le<float>(is, "range image header");
  cfg.min_range = detail::read_le<float>(is, "range image header");
  cfg.max_range = detail::read_le<float>(is, "range image header");
  cfg.validate();

  RangeImage image(cfg);
  detail::read_f32_array(is, image.data.data(), image.data.size(),
                         "range image payload");
  return image;
}

void write_range_image(const RangeImage& image, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open range image for writing: " + path);
  write_range_image(image, out);
  if (!out) throw IoError("write failed: " + path);
}

RangeImage read_range_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open range image: " + path);
  return read_range_image(in);
}

}  // namespace recnet
