#include "recnet/kitti_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "recnet/detail/binary.hpp"
#include "recnet/errors.hpp"

namespace recnet {

PointCloud read_kitti_bin(const std::string& path, std::size_t* dropped) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scan file: " + path);

  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);

  constexpr std::size_t kRecord = 16;
  if (size % kRecord != 0) {
    const std::size_t offset = size - size % kRecord;
    throw FormatError("truncated scan file " + path + ": size " +
                      std::to_string(size) + " is not a multiple of " +
                      std::to_string(kRecord) + " (incomplete record at byte " +
                      std::to_string(offset) + ")");
  }

  PointCloud cloud;
  const std::size_t n = size / kRecord;
  cloud.points.reserve(n);
  cloud.intensities.reserve(n);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    float rec[4];
    detail::read_f32_array(in, rec, 4, "scan record");
    if (!std::isfinite(rec[0]) || !std::isfinite(rec[1]) ||
        !std::isfinite(rec[2]) || !std::isfinite(rec[3])) {
      ++bad;
      continue;
    }
    cloud.points.push_back({rec[0], rec[1], rec[2]});
    cloud.intensities.push_back(rec[3]);
  }
  if (dropped) *dropped = bad;
  return cloud;
}

void write_kitti_bin(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open scan file for writing: " + path);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Point3& p = cloud.points[i];
    const float intensity =
        cloud.has_intensity() ? cloud.intensities[i] : 0.0f;
    detail::write_le<float>(out, p.x);
    detail::write_le<float>(out, p.y);
    detail::write_le<float>(out, p.z);
    detail::write_le<float>(out, intensity);
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<Pose> read_kitti_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file: " + path);

  std::vector<Pose> poses;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;  // blank line
    if (vals.size() != 12 || !ls.eof()) {
      throw FormatError("pose file " + path + " line " +
                        std::to_string(lineno) + ": expected 12 values, got " +
                        std::to_string(vals.size()) +
                        (ls.eof() ? "" : " plus non-numeric trailing data"));
    }
    // Row-major [R|t]: r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
    std::array<double, 9> r{vals[0], vals[1], vals[2], vals[4], vals[5],
                            vals[6], vals[8], vals[9], vals[10]};
    std::array<double, 3> t{vals[3], vals[7], vals[11]};
    try {
      poses.push_back(make_pose(r, t));
    } catch (const FormatError& e) {
      throw FormatError("pose file " + path + " line " +
                        std::to_string(lineno) + ": " + e.what());
    }
  }
  return poses;
}

void write_cloud_xyz(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open xyz file for writing: " + path);
  char buf[96];
  for (const Point3& p : cloud.points) {
    // %.9g round-trips any float32 exactly through text.
    std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g\n", p.x, p.y, p.z);
    out << buf;
  }
  if (!out) throw IoError("write failed: " + path);
}

PointCloud read_cloud_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open xyz file: " + path);
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    float x, y, z;
    if (!(ls >> x >> y >> z)) {
      throw FormatError("xyz file " + path + " line " +
                        std::to_string(lineno) + ": expected 3 coordinates");
    }
    cloud.points.push_back({x, y, z});
  }
  return cloud;
}

}  // namespace recnet
