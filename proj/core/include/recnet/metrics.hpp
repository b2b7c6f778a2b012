#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "recnet/point_cloud.hpp"

namespace recnet {

// Exact nearest-neighbor queries over a fixed point set. Build once, query
// read-only (and, if you like, concurrently). Ties in distance resolve
// toward the lower point index, so results are fully deterministic.
class SpatialIndex {
 public:
  explicit SpatialIndex(std::vector<Point3> points);

  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

  // The k nearest points to q by Euclidean distance, nearest first.
  // Throws ConfigError if k == 0 or k > size().
  std::vector<std::uint32_t> knn(const Point3& q, std::size_t k) const;

  // Index and squared distance of the single nearest point.
  std::pair<std::uint32_t, double> nearest(const Point3& q) const;

 private:
  struct Node {
    std::int32_t left = -1, right = -1;
    std::uint32_t point = 0;
    std::uint8_t axis = 0;
  };
  struct Best;  // bounded candidate set used during queries

  std::int32_t build(std::uint32_t* first, std::uint32_t* last, int depth);
  void search(std::int32_t node, const Point3& q, Best& best) const;

  std::vector<Point3> points_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

// Per-point local surface description from k-nearest-neighbor
// neighborhoods (the point itself is not its own neighbor).
struct LocalFeatures {
  std::vector<std::array<float, 3>> normals;  // unit, oriented toward origin
  std::vector<float> curvatures;              // lambda_min / sum ∈ [0, 1/3]
  std::vector<float> mean_neighbor_distances;  // meters
  std::vector<std::uint8_t> degenerate;  // 1 where the neighborhood collapsed

  std::size_t size() const { return normals.size(); }
};

// Normals come from the smallest-eigenvalue direction of the neighborhood
// covariance, sign-flipped to face the sensor origin; curvature is the
// eigenvalue ratio lambda_min / (l0+l1+l2). A zero covariance (all
// neighbors coincident) yields normal (0,0,1), curvature 0, and a set
// degenerate flag. Throws ConfigError unless cloud.size() > k > 0.
LocalFeatures local_features(const PointCloud& cloud, std::size_t k);

// Symmetric correspondence percentage: mean of (fraction of A-points with
// a B-neighbor within `radius`) and the reverse, times 100. Throws
// ConfigError on an empty cloud or nonpositive radius.
double corr_at(const PointCloud& a, const PointCloud& b, double radius);

// One direction's pooled feature-similarity means, each in [0, 100].
struct DirectionalSimilarity {
  double geom = 0.0, norm = 0.0, curv = 0.0;
};

struct SimilarityReport {
  double corr_at_half_meter = 0.0;  // percent
  double geom_sim = 0.0;            // percent
  double norm_sim = 0.0;            // percent
  double curv_sim = 0.0;            // percent
  std::size_t k = 0;                // neighborhood size used
  DirectionalSimilarity a_to_b, b_to_a;
};

// PointSSIM-style similarity: per point, compare its local features with
// those of its nearest counterpart; relative difference for geometry
// (mean neighbor distance) and curvature, |dot| for normals; pooled as
// the symmetric mean of both directions, times 100. Throws ConfigError
// unless both clouds are larger than k.
SimilarityReport pointssim(const PointCloud& a, const PointCloud& b,
                           std::size_t k = 10);

// Same, with features precomputed (they are the expensive part and are
// reusable across comparisons). Feature sizes must match the clouds.
SimilarityReport pointssim_with_features(const PointCloud& a,
                                         const LocalFeatures& fa,
                                         const PointCloud& b,
                                         const LocalFeatures& fb,
                                         std::size_t k);

// One table row: a named reconstruction variant scored against the
// originals, pooled as mean ± population standard deviation per column.
struct VariantSummary {
  std::string name;
  double corr_mean = 0.0, corr_std = 0.0;
  double geom_mean = 0.0, geom_std = 0.0;
  double norm_mean = 0.0, norm_std = 0.0;
  double curv_mean = 0.0, curv_std = 0.0;
  std::vector<SimilarityReport> per_scan;
};

struct ReconstructionReport {
  std::vector<VariantSummary> rows;
  std::size_t k = 0;
};

// Scores each variant's scans against the matching originals: the
// correspondence percentage at 0.5 m plus the three feature similarities,
// pooled across scans as mean ± population std. Every variant list must
// match `originals` in length. Throws ConfigError on empty or mismatched
// inputs.
ReconstructionReport evaluate_reconstruction(
    const std::vector<PointCloud>& originals,
    const std::vector<std::pair<std::string, std::vector<PointCloud>>>&
        variants,
    std::size_t k = 10);

// Comma-separated export, one line per variant:
//   variant,corr_mean,corr_std,geom_mean,geom_std,norm_mean,norm_std,
//   curv_mean,curv_std
// after a fixed header line.
void write_report(std::ostream& os, const ReconstructionReport& report);

}  // namespace recnet
