#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "recnet/errors.hpp"
#include "recnet/model.hpp"
#include "recnet/retrieval.hpp"
#include "recnet/training.hpp"
#include "support.hpp"

using namespace recnet;
using doctest::Contains;

namespace {

DescriptorRecord make_record(std::uint32_t id, double x, double y,
                             double timestamp,
                             const std::string& profile = "mini",
                             std::uint32_t fill_seed = 0) {
  const ModelProfile& p = ModelProfile::by_name(profile);
  DescriptorRecord rec;
  rec.scan_id = id;
  if (fill_seed == 0) {
    rec.bottleneck = Tensor::zeros({p.bottleneck_c, p.bottleneck_w});
  } else {
    std::mt19937 rng(fill_seed);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    std::vector<float> values(
        static_cast<std::size_t>(p.bottleneck_c) * p.bottleneck_w);
    for (float& v : values) v = dist(rng);
    rec.bottleneck =
        Tensor::from_data({p.bottleneck_c, p.bottleneck_w}, values);
  }
  rec.pose.translation = {x, y, 0.0};
  rec.timestamp = timestamp;
  return rec;
}

// Circular survey with two laps: the second lap revisits the first lap's
// poses exactly, so every late query has a distance-zero map match.
std::vector<DescriptorRecord> circle_records(int count, int laps,
                                             double radius) {
  std::vector<DescriptorRecord> records;
  for (int k = 0; k < count; ++k) {
    const double phi = 2.0 * M_PI * laps * k / count;
    records.push_back(make_record(static_cast<std::uint32_t>(k),
                                  radius * std::cos(phi),
                                  radius * std::sin(phi),
                                  5.0 * k));
  }
  return records;
}

}  // namespace

TEST_CASE("build_db tags the profile and keeps insertion order") {
  CHECK(build_db({}).empty());
  CHECK(build_db({}).profile.empty());

  std::vector<DescriptorRecord> records = {make_record(7, 0, 0, 0),
                                           make_record(3, 1, 0, 1),
                                           make_record(9, 2, 0, 2)};
  const DescriptorDB db = build_db(records);
  CHECK(db.size() == 3);
  CHECK(db.profile == "mini");
  CHECK(db.records[0].scan_id == 7);
  CHECK(db.records[1].scan_id == 3);
  CHECK(db.records[2].scan_id == 9);

  const DescriptorDB kitti_db =
      build_db({make_record(0, 0, 0, 0, "kitti")});
  CHECK(kitti_db.profile == "kitti");
}

TEST_CASE("build_db rejects malformed record sets") {
  CHECK_THROWS_WITH_AS(
      build_db({make_record(4, 0, 0, 0), make_record(4, 1, 0, 1)}),
      Contains("duplicate scan_id 4"), ConfigError);

  CHECK_THROWS_WITH_AS(
      build_db({make_record(0, 0, 0, 0, "mini"),
                make_record(1, 1, 0, 1, "kitti")}),
      Contains("mixed descriptor profiles"), ConfigError);

  DescriptorRecord odd;
  odd.scan_id = 0;
  odd.bottleneck = Tensor::zeros({5, 5});
  CHECK_THROWS_WITH_AS(build_db({odd}), Contains("matches no known profile"),
                       ConfigError);
}

TEST_CASE("split_by_time partitions on the timestamp and keeps order") {
  std::vector<DescriptorRecord> records;
  for (int k = 0; k < 40; ++k) {
    records.push_back(make_record(static_cast<std::uint32_t>(k), k, 0,
                                  5.0 * k));
  }
  const MapQuerySplit split = split_by_time(records);
  // Timestamps run 0,5,...,195; the default cutoff keeps t < 170 in the map.
  CHECK(split.map.size() == 34);
  CHECK(split.queries.size() == 6);
  CHECK(split.map.back().timestamp == doctest::Approx(165.0));
  CHECK(split.queries.front().timestamp == doctest::Approx(170.0));
  for (std::size_t i = 0; i < split.map.size(); ++i) {
    CHECK(split.map[i].scan_id == i);
  }
  for (std::size_t i = 0; i < split.queries.size(); ++i) {
    CHECK(split.queries[i].scan_id == 34 + i);
  }

  const MapQuerySplit early = split_by_time(records, 0.0);
  CHECK(early.map.empty());
  CHECK(early.queries.size() == 40);
}

TEST_CASE("oracle scoring decays with pose distance") {
  const ScoreFn score = oracle_score(10.0);
  const DescriptorRecord a = make_record(0, 0, 0, 0);
  CHECK(score(a, a) == doctest::Approx(1.0));
  CHECK(score(a, make_record(1, 10, 0, 1)) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(score(a, make_record(2, 3, 4, 2)) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK_THROWS_AS(oracle_score(0.0), ConfigError);
  CHECK_THROWS_AS(oracle_score(-1.0), ConfigError);
}

TEST_CASE("query returns the argmax record and applies the threshold") {
  const DescriptorDB db = build_db(
      {make_record(10, 0, 0, 0), make_record(11, 5, 0, 1),
       make_record(12, 20, 0, 2)});
  const ScoreFn score = oracle_score(10.0);

  const DescriptorRecord q = make_record(99, 4, 0, 9);
  const QueryResult r = query(db, q, score, 0.5);
  CHECK(r.best_id == 11);
  CHECK(r.score == doctest::Approx(std::exp(-0.1)).epsilon(1e-12));
  CHECK(r.accepted);

  // Same best match, but a cutoff above its score rejects it.
  const QueryResult rejected = query(db, q, score, 0.95);
  CHECK(rejected.best_id == 11);
  CHECK_FALSE(rejected.accepted);

  // Acceptance is a >= comparison at the boundary.
  const QueryResult boundary = query(db, q, score, r.score);
  CHECK(boundary.accepted);
}

TEST_CASE("query breaks score ties toward the lowest scan_id") {
  // Constant score makes every record tie.
  const ScoreFn flat = [](const DescriptorRecord&, const DescriptorRecord&) {
    return 0.25;
  };
  const DescriptorDB db = build_db(
      {make_record(31, 0, 0, 0), make_record(5, 1, 0, 1),
       make_record(17, 2, 0, 2)});
  const QueryResult r = query(db, make_record(0, 0, 0, 0), flat, 0.0);
  CHECK(r.best_id == 5);
  CHECK(r.score == doctest::Approx(0.25));

  // Symmetric poses either side of the query tie exactly under the oracle.
  const DescriptorDB sym = build_db(
      {make_record(8, 2, 0, 0), make_record(2, -2, 0, 1)});
  const QueryResult s =
      query(sym, make_record(0, 0, 0, 0), oracle_score(10.0), 0.0);
  CHECK(s.best_id == 2);
}

TEST_CASE("query validates the database and the descriptor shape") {
  CHECK_THROWS_WITH_AS(
      query(DescriptorDB{}, make_record(0, 0, 0, 0), oracle_score(10.0), 0.5),
      Contains("database is empty"), ConfigError);

  const DescriptorDB db = build_db({make_record(0, 0, 0, 0, "mini")});
  CHECK_THROWS_WITH_AS(
      query(db, make_record(1, 0, 0, 0, "kitti"), oracle_score(10.0), 0.5),
      Contains("does not match database profile"), ShapeError);
}

TEST_CASE("query through the learned tail matches direct tail scoring") {
  RecNetModel model = RecNetModel::init(ModelProfile::mini(), 11u);
  std::vector<DescriptorRecord> records;
  for (std::uint32_t k = 0; k < 4; ++k) {
    records.push_back(
        make_record(k, k, 0, k, "mini", /*fill_seed=*/100 + k));
  }
  const DescriptorDB db = build_db(records);
  DescriptorRecord q = make_record(9, 0, 0, 9, "mini", /*fill_seed=*/500);

  // Direct argmax over tail_similarity, computed without the query helper.
  NoGradGuard guard;
  std::size_t best_j = 0;
  double best_s = -1.0;
  for (std::size_t j = 0; j < db.records.size(); ++j) {
    const double s = static_cast<double>(
        model.tail_similarity(q.bottleneck, db.records[j].bottleneck).item());
    if (s > best_s) {
      best_s = s;
      best_j = j;
    }
  }

  const QueryResult r = query(db, q, model, 0.0);
  CHECK(r.best_id == db.records[best_j].scan_id);
  CHECK(r.score == doctest::Approx(best_s).epsilon(1e-12));
  CHECK(r.accepted);
}

TEST_CASE("pairwise score matrix matches per-query results") {
  const std::vector<DescriptorRecord> map_records =
      circle_records(12, 1, 8.0);
  const DescriptorDB db = build_db(map_records);
  std::vector<DescriptorRecord> queries = {make_record(90, 8, 0, 100),
                                           make_record(91, -8, 0, 101),
                                           make_record(92, 0, 8, 102)};
  const ScoreFn score = oracle_score(10.0);

  const auto matrix = pairwise_score_matrix(db, queries, score);
  REQUIRE(matrix.size() == queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    REQUIRE(matrix[i].size() == db.size());
    double row_max = -1.0;
    std::size_t row_argmax = 0;
    for (std::size_t j = 0; j < db.size(); ++j) {
      CHECK(matrix[i][j] ==
            doctest::Approx(score(queries[i], db.records[j])).epsilon(1e-12));
      if (matrix[i][j] > row_max) {
        row_max = matrix[i][j];
        row_argmax = j;
      }
    }
    // The query helper's argmax is the row maximum (scores here are
    // distinct, so tie-breaking cannot diverge).
    const QueryResult r = query(db, queries[i], score, 0.0);
    CHECK(r.best_id == db.records[row_argmax].scan_id);
    CHECK(r.score == doctest::Approx(row_max).epsilon(1e-12));
  }

  CHECK(pairwise_score_matrix(db, {}, score).empty());
}

TEST_CASE("oracle retrieval on a revisiting loop finds every true match") {
  // 36 poses over two laps: scans 18..35 land exactly on scans 0..17.
  const std::vector<DescriptorRecord> records = circle_records(36, 2, 8.0);
  const MapQuerySplit split = split_by_time(records);
  REQUIRE(split.map.size() == 34);
  REQUIRE(split.queries.size() == 2);
  const DescriptorDB db = build_db(split.map);
  const ScoreFn score = oracle_score(10.0);

  for (const DescriptorRecord& q : split.queries) {
    // Brute-force geometric nearest neighbour, independent of the oracle.
    std::size_t nearest = 0;
    double nearest_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < db.size(); ++j) {
      const double d = q.pose.distance_to(db.records[j].pose);
      if (d < nearest_d) {
        nearest_d = d;
        nearest = j;
      }
    }
    CHECK(nearest_d < 1e-9);  // the revisit is exact

    const QueryResult r = query(db, q, score, 0.5);
    CHECK(r.best_id == db.records[nearest].scan_id);
    CHECK(r.accepted);
  }
}

TEST_CASE("precision and recall sweep behaves like the definitions") {
  const std::vector<DescriptorRecord> records = circle_records(36, 2, 8.0);
  const MapQuerySplit split = split_by_time(records);
  DescriptorDB db = build_db(split.map);
  std::vector<DescriptorRecord> queries = split.queries;
  // One query 32 m from the nearest map pose: never relevant (radius 3),
  // best score exp(-3.2) ~= 0.041, so low thresholds accept it as a false
  // positive and moderate ones reject it.
  queries.push_back(make_record(200, 40, 0, 180));
  const ScoreFn score = oracle_score(10.0);
  const double gt_radius = 3.0;

  const std::vector<double> thresholds = {0.0001, 0.3, 0.7, 0.9, 1.5};
  const PRCurve curve = evaluate_pr(db, queries, score, gt_radius, thresholds);
  REQUIRE(curve.points.size() == thresholds.size());

  // Threshold 0.0001 accepts everything including the stray query:
  // TP=2, FP=1, relevant=2.
  CHECK(curve.points[0].precision == doctest::Approx(2.0 / 3.0));
  CHECK(curve.points[0].recall == doctest::Approx(1.0));
  // Threshold 0.3 rejects the stray query (its best score is tiny):
  // perfect precision, full recall.
  CHECK(curve.points[1].precision == doctest::Approx(1.0));
  CHECK(curve.points[1].recall == doctest::Approx(1.0));
  // Threshold above every possible score: nothing accepted, precision
  // defaults to 1.
  CHECK(curve.points[4].precision == doctest::Approx(1.0));
  CHECK(curve.points[4].recall == doctest::Approx(0.0));

  // Monotonicity in the threshold: recall never increases.
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    CHECK(curve.points[i].recall <= curve.points[i - 1].recall + 1e-12);
  }
}

TEST_CASE("acceptance-style oracle sweep yields a perfect operating point") {
  const std::vector<DescriptorRecord> records = circle_records(36, 2, 8.0);
  const MapQuerySplit split = split_by_time(records);
  const DescriptorDB db = build_db(split.map);
  const double m = 10.0;
  const double gt_radius = 3.0;
  // At this cutoff the oracle accepts exactly the queries whose best match
  // lies within gt_radius.
  const double th = std::exp(-gt_radius / m) - 1e-9;

  const PRCurve curve =
      evaluate_pr(db, split.queries, oracle_score(m), gt_radius, {th});
  REQUIRE(curve.points.size() == 1);
  CHECK(curve.points[0].precision == doctest::Approx(1.0));
  CHECK(curve.points[0].recall == doctest::Approx(1.0));
}

TEST_CASE("evaluate_pr validates its inputs") {
  const std::vector<DescriptorRecord> records = circle_records(12, 1, 8.0);
  const DescriptorDB db = build_db(records);
  const std::vector<DescriptorRecord> queries = {make_record(90, 8, 0, 100)};
  const ScoreFn score = oracle_score(10.0);

  CHECK_THROWS_WITH_AS(
      evaluate_pr(DescriptorDB{}, queries, score, 3.0, {0.5}),
      Contains("database is empty"), ConfigError);
  CHECK_THROWS_WITH_AS(evaluate_pr(db, {}, score, 3.0, {0.5}),
                       Contains("query set is empty"), ConfigError);
  CHECK_THROWS_WITH_AS(evaluate_pr(db, queries, score, 3.0, {}),
                       Contains("threshold list is empty"), ConfigError);
  CHECK_THROWS_WITH_AS(evaluate_pr(db, queries, score, 3.0, {0.5, 0.5}),
                       Contains("strictly increasing"), ConfigError);
  CHECK_THROWS_WITH_AS(evaluate_pr(db, queries, score, 3.0, {0.7, 0.3}),
                       Contains("strictly increasing"), ConfigError);
  CHECK_THROWS_WITH_AS(evaluate_pr(db, queries, score, 0.0, {0.5}),
                       Contains("gt_radius must be positive"), ConfigError);
}

TEST_CASE("retrieval results do not depend on database insertion order") {
  std::vector<DescriptorRecord> records = circle_records(20, 1, 8.0);
  const std::vector<DescriptorRecord> queries = {
      make_record(100, 7.9, 0.3, 50), make_record(101, -6.0, 5.0, 51),
      make_record(102, 0.0, -8.1, 52)};
  const ScoreFn score = oracle_score(10.0);

  const DescriptorDB forward = build_db(records);
  std::vector<DescriptorRecord> shuffled = records;
  std::mt19937 rng(77);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const DescriptorDB permuted = build_db(shuffled);

  for (const DescriptorRecord& q : queries) {
    const QueryResult a = query(forward, q, score, 0.5);
    const QueryResult b = query(permuted, q, score, 0.5);
    CHECK(a.best_id == b.best_id);
    CHECK(a.score == doctest::Approx(b.score).epsilon(1e-12));
    CHECK(a.accepted == b.accepted);
  }

  const PRCurve ca =
      evaluate_pr(forward, queries, score, 3.0, {0.2, 0.5, 0.8});
  const PRCurve cb =
      evaluate_pr(permuted, queries, score, 3.0, {0.2, 0.5, 0.8});
  for (std::size_t i = 0; i < ca.points.size(); ++i) {
    CHECK(ca.points[i].precision == doctest::Approx(cb.points[i].precision));
    CHECK(ca.points[i].recall == doctest::Approx(cb.points[i].recall));
  }
}

TEST_CASE("encode_sequence descriptors match direct encoding") {
  const SceneSpec spec = [] {
    SceneSpec s;
    s.profile = "mini";
    s.num_scans = 4;
    s.points_per_m2 = 4.0;
    return s;
  }();
  const ScanSequence seq = make_synthetic_sequence(spec, 21u);
  RecNetModel model = RecNetModel::init(ModelProfile::mini(), 5u);

  const std::vector<DescriptorRecord> records = encode_sequence(model, seq);
  REQUIRE(records.size() == seq.size());
  const ProjectionConfig proj = projection_for_profile("mini");
  NoGradGuard guard;
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].scan_id == i);
    CHECK(records[i].timestamp == doctest::Approx(seq.timestamps[i]));
    const Tensor direct =
        model.encode(range_image_to_tensor(project(seq.scans[i], proj)));
    REQUIRE(records[i].bottleneck.shape() == direct.shape());
    bool same = true;
    for (std::size_t k = 0; k < direct.data().size(); ++k) {
      same = same && records[i].bottleneck.data()[k] == direct.data()[k];
    }
    CHECK(same);
  }

  // Descriptors from the model form a valid database of the right profile.
  const DescriptorDB db = build_db(records);
  CHECK(db.profile == "mini");
}

TEST_CASE("pr curve text export is parseable") {
  PRCurve curve;
  curve.points.push_back({0.25, 1.0, 0.75});
  curve.points.push_back({0.5, 0.875, 0.5});
  std::ostringstream out;
  write_pr_curve(out, curve);

  std::istringstream in(out.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "threshold,precision,recall");
  REQUIRE(std::getline(in, line));
  CHECK(line == "0.25,1,0.75");
  REQUIRE(std::getline(in, line));
  CHECK(line == "0.5,0.875,0.5");
  CHECK_FALSE(std::getline(in, line));
}
