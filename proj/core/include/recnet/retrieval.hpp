#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "recnet/model.hpp"
#include "recnet/point_cloud.hpp"
#include "recnet/tensor.hpp"
#include "recnet/training.hpp"

namespace recnet {

// One stored place: the scan's compact descriptor plus where and when it
// was taken.
struct DescriptorRecord {
  std::uint32_t scan_id = 0;
  Tensor bottleneck;
  Pose pose;
  double timestamp = 0.0;
};

// Immutable descriptor database. `profile` names the bottleneck geometry
// every record shares ("kitti" or "mini"; empty for an empty database).
struct DescriptorDB {
  std::vector<DescriptorRecord> records;
  std::string profile;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// Pairwise similarity used by retrieval, called as score(query, stored).
// Injection point: production uses the learned tail head, tests and
// oracles substitute closed-form scores.
using ScoreFn =
    std::function<double(const DescriptorRecord&, const DescriptorRecord&)>;

// Eval-mode tail head of a trained model as a ScoreFn; the query
// descriptor feeds the first tail input, the stored one the second.
ScoreFn tail_score(RecNetModel& model);

// Ground-truth stand-in: exp(-d/m) from the recorded poses. Used to
// validate the retrieval machinery independently of training quality.
ScoreFn oracle_score(double m);

// Validates uniform bottleneck geometry and unique scan ids, tags the
// profile, and preserves insertion order.
DescriptorDB build_db(const std::vector<DescriptorRecord>& records);

// Eval-mode descriptors for a whole posed sequence; scan_id is the index
// in the sequence.
std::vector<DescriptorRecord> encode_sequence(RecNetModel& model,
                                              const ScanSequence& seq);

// Records before `t_split` seconds become the map, the rest become
// queries (both keep their order).
struct MapQuerySplit {
  std::vector<DescriptorRecord> map;
  std::vector<DescriptorRecord> queries;
};
MapQuerySplit split_by_time(const std::vector<DescriptorRecord>& records,
                            double t_split = 170.0);

// Best stored match for one query: argmax of the score over the whole
// database, ties broken toward the lowest scan_id; accepted when the
// best score reaches the threshold.
struct QueryResult {
  std::uint32_t best_id = 0;
  double score = 0.0;
  bool accepted = false;
};
QueryResult query(const DescriptorDB& db, const DescriptorRecord& q,
                  const ScoreFn& score, double threshold);
QueryResult query(const DescriptorDB& db, const DescriptorRecord& q,
                  RecNetModel& model, double threshold);

// All query-against-database scores: result[i][j] pairs queries[i] with
// db.records[j].
std::vector<std::vector<double>> pairwise_score_matrix(
    const DescriptorDB& db, const std::vector<DescriptorRecord>& queries,
    const ScoreFn& score);

// Threshold-swept retrieval quality.
struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};
struct PRCurve {
  std::vector<PRPoint> points;
};

// For each threshold (strictly increasing): a query counts as a true
// positive when accepted and its best match lies within gt_radius of the
// query pose, a false positive when accepted and farther. Queries with
// any map record within gt_radius are the recall denominator. Zero
// accepted queries give precision 1; zero relevant queries give recall 0.
PRCurve evaluate_pr(const DescriptorDB& db,
                    const std::vector<DescriptorRecord>& queries,
                    const ScoreFn& score, double gt_radius,
                    const std::vector<double>& thresholds);

// Comma-separated "threshold,precision,recall" rows for plotting.
void write_pr_curve(std::ostream& out, const PRCurve& curve);

}  // namespace recnet
