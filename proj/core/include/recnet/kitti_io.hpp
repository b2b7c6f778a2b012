#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "recnet/point_cloud.hpp"

namespace recnet {

// Reads a KITTI velodyne scan: packed records of 4 little-endian float32
// (x, y, z, intensity), no header. Records containing NaN/Inf are dropped;
// pass `dropped` to learn how many. Throws FormatError when the file size
// is not a multiple of 16 (message names the offset of the trailing bytes)
// and IoError when the path cannot be opened.
PointCloud read_kitti_bin(const std::string& path,
                          std::size_t* dropped = nullptr);

// Writes the cloud back in the same packed format. Missing intensities are
// written as 0.
void write_kitti_bin(const PointCloud& cloud, const std::string& path);

// Reads a KITTI odometry pose file: one pose per non-empty line as 12
// whitespace-separated floats, row-major [R|t]. Rotations are validated;
// FormatError messages carry the 1-based line number.
std::vector<Pose> read_kitti_poses(const std::string& path);

// Writes "x y z\n" per point with enough digits that reading the text back
// reproduces the float32 coordinates exactly.
void write_cloud_xyz(const PointCloud& cloud, const std::string& path);

// Reads the text format written by write_cloud_xyz.
PointCloud read_cloud_xyz(const std::string& path);

}  // namespace recnet
