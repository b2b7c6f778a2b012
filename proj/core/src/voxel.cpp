#include "recnet/voxel.hpp"

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "recnet/errors.hpp"

namespace recnet {
namespace {

struct VoxelKey {
  std::int64_t ix, iy, iz;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const {
    // Same mixing constants as the usual large-prime spatial hash.
    std::size_t h = static_cast<std::size_t>(k.ix) * 73856093u;
    h ^= static_cast<std::size_t>(k.iy) * 19349669u;
    h ^= static_cast<std::size_t>(k.iz) * 83492791u;
    return h;
  }
};

struct Accum {
  double x = 0, y = 0, z = 0;
  std::size_t count = 0;
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) {
    throw ConfigError("voxel_size must be positive, got " +
                      std::to_string(voxel_size));
  }

  // Slots keep first-touch order so the output is deterministic for a
  // fixed input order regardless of hash-table iteration quirks.
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot;
  std::vector<Accum> accums;
  slot.reserve(cloud.points.size());

  for (const Point3& p : cloud.points) {
    const VoxelKey key{
        static_cast<std::int64_t>(std::floor(p.x / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.y / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.z / voxel_size)),
    };
    auto [it, inserted] = slot.try_emplace(key, accums.size());
    if (inserted) accums.emplace_back();
    Accum& a = accums[it->second];
    a.x += p.x;
    a.y += p.y;
    a.z += p.z;
    ++a.count;
  }

  PointCloud out;
  out.frame_id = cloud.frame_id;
  out.timestamp = cloud.timestamp;
  out.points.reserve(accums.size());
  for (const Accum& a : accums) {
    const double inv = 1.0 / static_cast<double>(a.count);
    out.points.push_back({static_cast<float>(a.x * inv),
                          static_cast<float>(a.y * inv),
                          static_cast<float>(a.z * inv)});
  }
  return out;
}

}  // namespace recnet
