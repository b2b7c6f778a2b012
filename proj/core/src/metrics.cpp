#include "recnet/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "recnet/errors.hpp"

namespace recnet {

namespace {

double sq_dist(const Point3& a, const Point3& b) {
  const double dx = static_cast<double>(a.x) - b.x;
  const double dy = static_cast<double>(a.y) - b.y;
  const double dz = static_cast<double>(a.z) - b.z;
  return dx * dx + dy * dy + dz * dz;
}

double coord(const Point3& p, int axis) {
  switch (axis) {
    case 0: return p.x;
    case 1: return p.y;
    default: return p.z;
  }
}

}  // namespace

// A candidate set of at most k (distance², index) pairs, kept as a
// max-heap so the current worst member is O(1) to inspect and replace.
// Ordering breaks distance ties toward the lower index, which makes the
// final k-set and its order independent of tree layout.
struct SpatialIndex::Best {
  struct Entry {
    double d2;
    std::uint32_t idx;
  };
  static bool closer(const Entry& a, const Entry& b) {
    return a.d2 < b.d2 || (a.d2 == b.d2 && a.idx < b.idx);
  }
  std::size_t k;
  std::vector<Entry> heap;  // max-heap under `closer`

  bool full() const { return heap.size() == k; }
  double worst_d2() const { return heap.front().d2; }

  void offer(double d2, std::uint32_t idx) {
    const Entry e{d2, idx};
    if (!full()) {
      heap.push_back(e);
      std::push_heap(heap.begin(), heap.end(), closer);
    } else if (closer(e, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), closer);
      heap.back() = e;
      std::push_heap(heap.begin(), heap.end(), closer);
    }
  }
};

SpatialIndex::SpatialIndex(std::vector<Point3> points)
    : points_(std::move(points)) {
  if (points_.empty()) return;
  std::vector<std::uint32_t> order(points_.size());
  std::iota(order.begin(), order.end(), 0u);
  nodes_.reserve(points_.size());
  root_ = build(order.data(), order.data() + order.size(), 0);
}

std::int32_t SpatialIndex::build(std::uint32_t* first, std::uint32_t* last,
                                 int depth) {
  if (first == last) return -1;
  const int axis = depth % 3;
  std::uint32_t* mid = first + (last - first) / 2;
  std::nth_element(first, mid, last,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double ca = coord(points_[a], axis);
                     const double cb = coord(points_[b], axis);
                     return ca < cb || (ca == cb && a < b);
                   });
  const std::int32_t id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{-1, -1, *mid, static_cast<std::uint8_t>(axis)});
  const std::int32_t left = build(first, mid, depth + 1);
  const std::int32_t right = build(mid + 1, last, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void SpatialIndex::search(std::int32_t node, const Point3& q,
                          Best& best) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Point3& p = points_[n.point];
  best.offer(sq_dist(q, p), n.point);

  const double delta = coord(q, n.axis) - coord(p, n.axis);
  const std::int32_t near = delta < 0 ? n.left : n.right;
  const std::int32_t far = delta < 0 ? n.right : n.left;
  search(near, q, best);
  // The far half-space can still hold a winner when the splitting plane is
  // no farther than the current worst — including exactly equal, where a
  // lower index would displace an equal-distance candidate.
  if (!best.full() || delta * delta <= best.worst_d2()) search(far, q, best);
}

std::vector<std::uint32_t> SpatialIndex::knn(const Point3& q,
                                             std::size_t k) const {
  if (k == 0) throw ConfigError("knn: k must be positive");
  if (k > points_.size())
    throw ConfigError("knn: k = " + std::to_string(k) +
                      " exceeds index size " + std::to_string(points_.size()));
  Best best{k, {}};
  best.heap.reserve(k + 1);
  search(root_, q, best);
  std::sort(best.heap.begin(), best.heap.end(), Best::closer);
  std::vector<std::uint32_t> out(best.heap.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = best.heap[i].idx;
  return out;
}

std::pair<std::uint32_t, double> SpatialIndex::nearest(const Point3& q) const {
  if (points_.empty()) throw ConfigError("nearest: index is empty");
  Best best{1, {}};
  best.heap.reserve(2);
  search(root_, q, best);
  return {best.heap.front().idx, best.heap.front().d2};
}

LocalFeatures local_features(const PointCloud& cloud, std::size_t k) {
  if (k == 0) throw ConfigError("local_features: k must be positive");
  if (cloud.size() <= k)
    throw ConfigError("local_features: cloud size " +
                      std::to_string(cloud.size()) +
                      " must exceed neighborhood size " + std::to_string(k));
  const SpatialIndex index(cloud.points);
  LocalFeatures out;
  out.normals.resize(cloud.size());
  out.curvatures.resize(cloud.size());
  out.mean_neighbor_distances.resize(cloud.size());
  out.degenerate.assign(cloud.size(), 0);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    // k+1 nearest, then drop the point itself; if exact duplicates crowded
    // it out of the candidate set, drop the farthest instead so exactly k
    // genuine neighbors remain.
    std::vector<std::uint32_t> nn = index.knn(p, k + 1);
    auto self = std::find(nn.begin(), nn.end(), static_cast<std::uint32_t>(i));
    if (self != nn.end())
      nn.erase(self);
    else
      nn.pop_back();

    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    double dist_sum = 0.0;
    for (std::uint32_t j : nn) {
      const Point3& q = cloud.points[j];
      mean += Eigen::Vector3d(q.x, q.y, q.z);
      dist_sum += std::sqrt(sq_dist(p, q));
    }
    mean /= static_cast<double>(nn.size());
    out.mean_neighbor_distances[i] =
        static_cast<float>(dist_sum / static_cast<double>(nn.size()));

    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::uint32_t j : nn) {
      const Point3& q = cloud.points[j];
      const Eigen::Vector3d d = Eigen::Vector3d(q.x, q.y, q.z) - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(nn.size());

    if (cov.trace() <= 1e-18) {
      out.normals[i] = {0.0f, 0.0f, 1.0f};
      out.curvatures[i] = 0.0f;
      out.degenerate[i] = 1;
      continue;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
    const Eigen::Vector3d lambda = es.eigenvalues().cwiseMax(0.0);
    Eigen::Vector3d n = es.eigenvectors().col(0);
    // Face the sensor origin: flip when the normal points away from it.
    if (n.dot(Eigen::Vector3d(p.x, p.y, p.z)) > 0.0) n = -n;
    n.normalize();
    out.normals[i] = {static_cast<float>(n.x()), static_cast<float>(n.y()),
                      static_cast<float>(n.z())};
    const double total = lambda.sum();
    const double curv = total > 0.0 ? lambda(0) / total : 0.0;
    out.curvatures[i] =
        static_cast<float>(std::clamp(curv, 0.0, 1.0 / 3.0));
  }
  return out;
}

namespace {

double directed_corr(const PointCloud& from, const SpatialIndex& to,
                     double radius) {
  std::size_t hits = 0;
  const double r2 = radius * radius;
  for (const Point3& p : from.points)
    if (to.nearest(p).second <= r2) ++hits;
  return static_cast<double>(hits) / static_cast<double>(from.size());
}

}  // namespace

double corr_at(const PointCloud& a, const PointCloud& b, double radius) {
  if (a.empty() || b.empty())
    throw ConfigError("corr_at: clouds must be nonempty");
  if (!(radius > 0.0)) throw ConfigError("corr_at: radius must be positive");
  const SpatialIndex ia(a.points), ib(b.points);
  return 100.0 * 0.5 * (directed_corr(a, ib, radius) + directed_corr(b, ia, radius));
}

namespace {

constexpr double kRelEps = 1e-9;

double relative_sim(double fa, double fb) {
  const double denom = std::max({fa, fb, kRelEps});
  return 1.0 - std::abs(fa - fb) / denom;
}

DirectionalSimilarity directed_similarity(const PointCloud& from,
                                          const LocalFeatures& ffrom,
                                          const LocalFeatures& fto,
                                          const SpatialIndex& to) {
  double geom = 0.0, norm = 0.0, curv = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const std::uint32_t j = to.nearest(from.points[i]).first;
    geom += relative_sim(ffrom.mean_neighbor_distances[i],
                         fto.mean_neighbor_distances[j]);
    curv += relative_sim(ffrom.curvatures[i], fto.curvatures[j]);
    const auto& na = ffrom.normals[i];
    const auto& nb = fto.normals[j];
    const double dot = static_cast<double>(na[0]) * nb[0] +
                       static_cast<double>(na[1]) * nb[1] +
                       static_cast<double>(na[2]) * nb[2];
    norm += std::min(std::abs(dot), 1.0);
  }
  const double n = static_cast<double>(from.size());
  return {100.0 * geom / n, 100.0 * norm / n, 100.0 * curv / n};
}

}  // namespace

SimilarityReport pointssim_with_features(const PointCloud& a,
                                         const LocalFeatures& fa,
                                         const PointCloud& b,
                                         const LocalFeatures& fb,
                                         std::size_t k) {
  if (fa.size() != a.size() || fb.size() != b.size())
    throw ConfigError("pointssim: feature count does not match cloud size");
  const SpatialIndex ia(a.points), ib(b.points);
  SimilarityReport rep;
  rep.k = k;
  rep.a_to_b = directed_similarity(a, fa, fb, ib);
  rep.b_to_a = directed_similarity(b, fb, fa, ia);
  rep.geom_sim = 0.5 * (rep.a_to_b.geom + rep.b_to_a.geom);
  rep.norm_sim = 0.5 * (rep.a_to_b.norm + rep.b_to_a.norm);
  rep.curv_sim = 0.5 * (rep.a_to_b.curv + rep.b_to_a.curv);
  rep.corr_at_half_meter = corr_at(a, b, 0.5);
  return rep;
}

SimilarityReport pointssim(const PointCloud& a, const PointCloud& b,
                           std::size_t k) {
  if (a.size() <= k || b.size() <= k)
    throw ConfigError("pointssim: both clouds must be larger than k = " +
                      std::to_string(k));
  return pointssim_with_features(a, local_features(a, k), b,
                                 local_features(b, k), k);
}

namespace {

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd pool(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0.0;
  for (double x : xs) m += x;
  m /= n;
  double var = 0.0;
  for (double x : xs) var += (x - m) * (x - m);
  return {m, std::sqrt(var / n)};
}

}  // namespace

ReconstructionReport evaluate_reconstruction(
    const std::vector<PointCloud>& originals,
    const std::vector<std::pair<std::string, std::vector<PointCloud>>>&
        variants,
    std::size_t k) {
  if (originals.empty())
    throw ConfigError("evaluate_reconstruction: no original scans");
  ReconstructionReport report;
  report.k = k;
  for (const auto& [name, clouds] : variants) {
    if (clouds.size() != originals.size())
      throw ConfigError("evaluate_reconstruction: variant \"" + name +
                        "\" has " + std::to_string(clouds.size()) +
                        " scans, expected " +
                        std::to_string(originals.size()));
    VariantSummary row;
    row.name = name;
    std::vector<double> corr, geom, norm, curv;
    for (std::size_t i = 0; i < originals.size(); ++i) {
      SimilarityReport rep = pointssim(originals[i], clouds[i], k);
      row.per_scan.push_back(rep);
      corr.push_back(rep.corr_at_half_meter);
      geom.push_back(rep.geom_sim);
      norm.push_back(rep.norm_sim);
      curv.push_back(rep.curv_sim);
    }
    const MeanStd c = pool(corr), g = pool(geom), n = pool(norm),
                  cv = pool(curv);
    row.corr_mean = c.mean;
    row.corr_std = c.std;
    row.geom_mean = g.mean;
    row.geom_std = g.std;
    row.norm_mean = n.mean;
    row.norm_std = n.std;
    row.curv_mean = cv.mean;
    row.curv_std = cv.std;
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_report(std::ostream& os, const ReconstructionReport& report) {
  os << "variant,corr_mean,corr_std,geom_mean,geom_std,norm_mean,norm_std,"
        "curv_mean,curv_std\n";
  char buf[256];
  for (const VariantSummary& row : report.rows) {
    std::snprintf(buf, sizeof(buf),
                  ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.corr_mean,
                  row.corr_std, row.geom_mean, row.geom_std, row.norm_mean,
                  row.norm_std, row.curv_mean, row.curv_std);
    os << row.name << buf;
  }
}

}  // namespace recnet
