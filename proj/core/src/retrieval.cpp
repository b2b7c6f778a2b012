#include "recnet/retrieval.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <unordered_set>

#include "recnet/errors.hpp"
#include "recnet/projection.hpp"

namespace recnet {

namespace {

std::string profile_for_bottleneck(const std::vector<int>& shape) {
  for (const ModelProfile* p : {&ModelProfile::kitti(), &ModelProfile::mini()}) {
    if (shape.size() == 2 && shape[0] == p->bottleneck_c &&
        shape[1] == p->bottleneck_w) {
      return p->name;
    }
  }
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dims += (i ? "x" : "") + std::to_string(shape[i]);
  }
  throw ConfigError("descriptor bottleneck shape (" + dims +
                    ") matches no known profile");
}

void require_profile(const DescriptorDB& db, const DescriptorRecord& q,
                     const char* where) {
  const std::string q_profile = profile_for_bottleneck(q.bottleneck.shape());
  if (q_profile != db.profile) {
    throw ShapeError(std::string(where) + ": query descriptor profile " +
                     q_profile + " does not match database profile " +
                     db.profile);
  }
}

// Shared by query() and evaluate_pr(): exhaustive argmax with ties broken
// toward the lowest scan_id.
struct BestMatch {
  std::size_t index = 0;
  double score = -std::numeric_limits<double>::infinity();
};

BestMatch best_match(const DescriptorDB& db, const DescriptorRecord& q,
                     const ScoreFn& score) {
  BestMatch best;
  bool first = true;
  for (std::size_t j = 0; j < db.records.size(); ++j) {
    const double s = score(q, db.records[j]);
    const bool wins =
        first || s > best.score ||
        (s == best.score &&
         db.records[j].scan_id < db.records[best.index].scan_id);
    if (wins) {
      best.index = j;
      best.score = s;
      first = false;
    }
  }
  return best;
}

}  // namespace

ScoreFn tail_score(RecNetModel& model) {
  RecNetModel* m = &model;
  return [m](const DescriptorRecord& q, const DescriptorRecord& r) {
    NoGradGuard guard;
    return static_cast<double>(
        m->tail_similarity(q.bottleneck, r.bottleneck).item());
  };
}

ScoreFn oracle_score(double m) {
  if (!(m > 0.0)) {
    throw ConfigError("oracle_score: distance scale m must be positive, got " +
                      std::to_string(m));
  }
  return [m](const DescriptorRecord& q, const DescriptorRecord& r) {
    return std::exp(-q.pose.distance_to(r.pose) / m);
  };
}

DescriptorDB build_db(const std::vector<DescriptorRecord>& records) {
  DescriptorDB db;
  db.records = records;
  if (records.empty()) {
    return db;
  }
  db.profile = profile_for_bottleneck(records.front().bottleneck.shape());
  std::unordered_set<std::uint32_t> seen;
  for (const DescriptorRecord& rec : db.records) {
    const std::string p = profile_for_bottleneck(rec.bottleneck.shape());
    if (p != db.profile) {
      throw ConfigError("build_db: mixed descriptor profiles " + db.profile +
                        " and " + p);
    }
    if (!seen.insert(rec.scan_id).second) {
      throw ConfigError("build_db: duplicate scan_id " +
                        std::to_string(rec.scan_id));
    }
  }
  return db;
}

std::vector<DescriptorRecord> encode_sequence(RecNetModel& model,
                                              const ScanSequence& seq) {
  seq.validate();
  const ProjectionConfig proj = projection_for_profile(model.profile().name);
  std::vector<DescriptorRecord> records;
  records.reserve(seq.size());
  NoGradGuard guard;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const RangeImage img = project(seq.scans[i], proj);
    DescriptorRecord rec;
    rec.scan_id = static_cast<std::uint32_t>(i);
    rec.bottleneck = model.encode(range_image_to_tensor(img));
    rec.pose = seq.poses[i];
    rec.timestamp = seq.timestamps[i];
    records.push_back(std::move(rec));
  }
  return records;
}

MapQuerySplit split_by_time(const std::vector<DescriptorRecord>& records,
                            double t_split) {
  MapQuerySplit split;
  for (const DescriptorRecord& rec : records) {
    (rec.timestamp < t_split ? split.map : split.queries).push_back(rec);
  }
  return split;
}

QueryResult query(const DescriptorDB& db, const DescriptorRecord& q,
                  const ScoreFn& score, double threshold) {
  if (db.empty()) {
    throw ConfigError("query: descriptor database is empty");
  }
  require_profile(db, q, "query");
  const BestMatch best = best_match(db, q, score);
  QueryResult result;
  result.best_id = db.records[best.index].scan_id;
  result.score = best.score;
  result.accepted = best.score >= threshold;
  return result;
}

QueryResult query(const DescriptorDB& db, const DescriptorRecord& q,
                  RecNetModel& model, double threshold) {
  return query(db, q, tail_score(model), threshold);
}

std::vector<std::vector<double>> pairwise_score_matrix(
    const DescriptorDB& db, const std::vector<DescriptorRecord>& queries,
    const ScoreFn& score) {
  std::vector<std::vector<double>> matrix;
  matrix.reserve(queries.size());
  for (const DescriptorRecord& q : queries) {
    if (!db.empty()) {
      require_profile(db, q, "pairwise_score_matrix");
    }
    std::vector<double> row;
    row.reserve(db.records.size());
    for (const DescriptorRecord& rec : db.records) {
      row.push_back(score(q, rec));
    }
    matrix.push_back(std::move(row));
  }
  return matrix;
}

PRCurve evaluate_pr(const DescriptorDB& db,
                    const std::vector<DescriptorRecord>& queries,
                    const ScoreFn& score, double gt_radius,
                    const std::vector<double>& thresholds) {
  if (db.empty()) {
    throw ConfigError("evaluate_pr: descriptor database is empty");
  }
  if (queries.empty()) {
    throw ConfigError("evaluate_pr: query set is empty");
  }
  if (thresholds.empty()) {
    throw ConfigError("evaluate_pr: threshold list is empty");
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) {
      throw ConfigError(
          "evaluate_pr: thresholds must be strictly increasing (violated at "
          "index " +
          std::to_string(i) + ")");
    }
  }
  if (!(gt_radius > 0.0)) {
    throw ConfigError("evaluate_pr: gt_radius must be positive, got " +
                      std::to_string(gt_radius));
  }

  // Scores are threshold-independent: resolve each query's best match and
  // ground-truth status once, then sweep the cutoff.
  struct QueryStanding {
    double score = 0.0;
    bool best_within_radius = false;
    bool relevant = false;
  };
  std::vector<QueryStanding> standings;
  standings.reserve(queries.size());
  std::size_t relevant_total = 0;
  for (const DescriptorRecord& q : queries) {
    require_profile(db, q, "evaluate_pr");
    const BestMatch best = best_match(db, q, score);
    QueryStanding st;
    st.score = best.score;
    st.best_within_radius =
        q.pose.distance_to(db.records[best.index].pose) <= gt_radius;
    for (const DescriptorRecord& rec : db.records) {
      if (q.pose.distance_to(rec.pose) <= gt_radius) {
        st.relevant = true;
        break;
      }
    }
    relevant_total += st.relevant ? 1 : 0;
    standings.push_back(st);
  }

  PRCurve curve;
  curve.points.reserve(thresholds.size());
  for (const double th : thresholds) {
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (const QueryStanding& st : standings) {
      if (st.score >= th) {
        (st.best_within_radius ? tp : fp) += 1;
      }
    }
    PRPoint point;
    point.threshold = th;
    point.precision =
        (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    point.recall = relevant_total == 0
                       ? 0.0
                       : static_cast<double>(tp) / static_cast<double>(relevant_total);
    curve.points.push_back(point);
  }
  return curve;
}

void write_pr_curve(std::ostream& out, const PRCurve& curve) {
  out << "threshold,precision,recall\n";
  char line[128];
  for (const PRPoint& p : curve.points) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g\n", p.threshold,
                  p.precision, p.recall);
    out << line;
  }
}

}  // namespace recnet
