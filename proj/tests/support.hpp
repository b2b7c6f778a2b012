#pragma once

// Shared helpers for the test executables: scratch directories that clean
// up after themselves and deterministic random cloud generators.

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "recnet/point_cloud.hpp"

namespace testsupport {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const auto base = fs::temp_directory_path();
    for (int i = 0;; ++i) {
      fs::path candidate =
          base / (tag + "-" + std::to_string(::getpid()) + "-" +
                  std::to_string(i));
      std::error_code ec;
      if (fs::create_directory(candidate, ec)) {
        path_ = candidate;
        break;
      }
    }
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline recnet::PointCloud random_cloud(std::size_t n, unsigned seed,
                                       float extent = 50.0f) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> coord(-extent, extent);
  recnet::PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back({coord(rng), coord(rng), coord(rng)});
  }
  return cloud;
}

}  // namespace testsupport
