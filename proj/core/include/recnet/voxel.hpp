#pragma once

#include "recnet/point_cloud.hpp"

namespace recnet {

// Voxel-grid downsampling: one output point per occupied voxel, placed at
// the centroid of that voxel's members. The voxel index of a point is
// floor(p / voxel_size) per axis, so negative coordinates bucket correctly.
// Output order is the order in which voxels are first touched, making the
// result deterministic for a fixed input order. Intensity, frame id and
// timestamp are not carried over. Throws ConfigError if voxel_size <= 0.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size);

}  // namespace recnet
