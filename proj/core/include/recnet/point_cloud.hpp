#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "recnet/errors.hpp"

namespace recnet {

struct Point3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;

  float norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline Point3 operator-(const Point3& a, const Point3& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}
inline Point3 operator+(const Point3& a, const Point3& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}

// A scan. Intensities, when present, run parallel to points (same length);
// an empty intensity vector means "no intensity channel".
struct PointCloud {
  std::vector<Point3> points;
  std::vector<float> intensities;
  std::string frame_id;
  std::optional<double> timestamp;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensities.empty(); }
};

// Rigid transform, row-major 3x3 rotation plus translation in meters.
// Construction validates orthonormality so downstream pose math can
// assume a proper rotation.
struct Pose {
  std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> translation{0, 0, 0};

  Point3 apply(const Point3& p) const {
    const double x = p.x, y = p.y, z = p.z;
    return {
        static_cast<float>(rotation[0] * x + rotation[1] * y + rotation[2] * z +
                           translation[0]),
        static_cast<float>(rotation[3] * x + rotation[4] * y + rotation[5] * z +
                           translation[1]),
        static_cast<float>(rotation[6] * x + rotation[7] * y + rotation[8] * z +
                           translation[2]),
    };
  }

  double distance_to(const Pose& other) const {
    const double dx = translation[0] - other.translation[0];
    const double dy = translation[1] - other.translation[1];
    const double dz = translation[2] - other.translation[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
  }
};

// Checks R^T R = I and det(R) = 1, both within `tol`.
inline void validate_rotation(const std::array<double, 9>& r,
                              double tol = 1e-6) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;  // column i of R dotted with column j
      for (int k = 0; k < 3; ++k) dot += r[3 * k + i] * r[3 * k + j];
      const double expect = (i == j) ? 1.0 : 0.0;
      if (std::abs(dot - expect) > tol) {
        throw FormatError("rotation matrix is not orthonormal: |col" +
                          std::to_string(i) + " . col" + std::to_string(j) +
                          " - " + std::to_string(static_cast<int>(expect)) +
                          "| = " + std::to_string(std::abs(dot - expect)));
      }
    }
  }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                     r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  if (std::abs(det - 1.0) > tol) {
    throw FormatError("rotation matrix determinant is " + std::to_string(det) +
                      ", expected 1");
  }
}

inline Pose make_pose(const std::array<double, 9>& rotation,
                      const std::array<double, 3>& translation) {
  validate_rotation(rotation);
  return Pose{rotation, translation};
}

}  // namespace recnet
