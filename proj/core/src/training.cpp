#include "recnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "recnet/detail/binary.hpp"
#include "recnet/errors.hpp"
#include "recnet/ops.hpp"

namespace recnet {

namespace fs = std::filesystem;

void ScanSequence::validate() const {
  const std::size_t n = scans.size();
  if (poses.size() != n || timestamps.size() != n)
    throw ConfigError("scan sequence: " + std::to_string(n) + " scans but " +
                      std::to_string(poses.size()) + " poses and " +
                      std::to_string(timestamps.size()) + " timestamps");
  if (!sources.empty() && sources.size() != n)
    throw ConfigError("scan sequence: " + std::to_string(sources.size()) +
                      " sources for " + std::to_string(n) + " scans");
  for (std::size_t i = 1; i < n; ++i)
    if (timestamps[i] < timestamps[i - 1])
      throw ConfigError("scan sequence: timestamp decreases at index " +
                        std::to_string(i));
}

void TrainConfig::validate() const {
  loss.validate();
  if (!(learning_rate > 0.0))
    throw ConfigError("train config: learning_rate must be > 0, got " +
                      std::to_string(learning_rate));
  if (batch_size < 1)
    throw ConfigError("train config: batch_size must be >= 1, got " +
                      std::to_string(batch_size));
  if (steps < 0)
    throw ConfigError("train config: steps must be >= 0, got " +
                      std::to_string(steps));
  if (!(r_pos > 0.0) || !(r_pos < r_neg))
    throw ConfigError("train config: need 0 < r_pos < r_neg, got r_pos=" +
                      std::to_string(r_pos) + " r_neg=" +
                      std::to_string(r_neg));
  if (checkpoint_interval < 0)
    throw ConfigError("train config: checkpoint_interval must be >= 0, got " +
                      std::to_string(checkpoint_interval));
  (void)ModelProfile::by_name(profile);  // throws on unknown names
}

ProjectionConfig projection_for_profile(const std::string& profile) {
  if (profile == "kitti") return kitti_hdl64_config();
  if (profile == "mini") return os1_32_config();
  throw ConfigError("unknown model profile \"" + profile +
                    "\" (known: kitti, mini)");
}

Tensor range_image_to_tensor(const RangeImage& image) {
  const int h = image.config.height, w = image.config.width;
  Tensor t = Tensor::zeros({1, h, w});
  const float inv = static_cast<float>(1.0 / image.config.max_range);
  for (std::size_t i = 0; i < image.data.size(); ++i)
    t.data()[i] = image.data[i] * inv;
  return t;
}

RangeImage tensor_to_range_image(const Tensor& t,
                                 const ProjectionConfig& config) {
  const auto& s = t.shape();
  const bool chw = t.rank() == 3 && s[0] == 1;
  const bool hw = t.rank() == 2;
  const int h = chw ? s[1] : (hw ? s[0] : -1);
  const int w = chw ? s[2] : (hw ? s[1] : -1);
  if (h != config.height || w != config.width)
    throw ShapeError("tensor_to_range_image: expected a (1," +
                     std::to_string(config.height) + "," +
                     std::to_string(config.width) + ") image");
  RangeImage img(config);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    double r = static_cast<double>(t.data()[i]) * config.max_range;
    if (r < config.min_range)
      r = 0.0;  // below the sensor's window: no return
    else if (r > config.max_range)
      r = config.max_range;
    img.data[i] = static_cast<float>(r);
  }
  return img;
}

namespace {

struct PairPools {
  std::vector<std::pair<int, int>> near, far;
  double nearest = 0.0;  // closest pair distance seen, for error messages
};

PairPools build_pair_pools(const ScanSequence& seq, const TrainConfig& cfg) {
  PairPools pools;
  const int n = static_cast<int>(seq.size());
  double nearest = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = seq.poses[i].distance_to(seq.poses[j]);
      nearest = std::min(nearest, d);
      if (d <= cfg.r_pos) pools.near.emplace_back(i, j);
      if (d >= cfg.r_neg) pools.far.emplace_back(i, j);
    }
  }
  pools.nearest = nearest;
  return pools;
}

std::vector<std::pair<int, int>> draw_pairs(const PairPools& pools,
                                            const TrainConfig& cfg,
                                            std::mt19937& rng) {
  if (pools.near.empty())
    throw ConfigError(
        "pair sampling: no scan pairs within r_pos=" +
        std::to_string(cfg.r_pos) + " m (closest available pair is " +
        std::to_string(pools.nearest) + " m apart); widen the radii");
  int near_count = (cfg.batch_size + 1) / 2;
  int far_count = cfg.batch_size - near_count;
  if (pools.far.empty()) {  // tiny sequences: fall back to all-near batches
    near_count = cfg.batch_size;
    far_count = 0;
  }
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(cfg.batch_size));
  std::uniform_int_distribution<std::size_t> pick_near(0,
                                                       pools.near.size() - 1);
  for (int k = 0; k < near_count; ++k) out.push_back(pools.near[pick_near(rng)]);
  if (far_count > 0) {
    std::uniform_int_distribution<std::size_t> pick_far(0,
                                                        pools.far.size() - 1);
    for (int k = 0; k < far_count; ++k) out.push_back(pools.far[pick_far(rng)]);
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> sample_index_pairs(const ScanSequence& seq,
                                                    const TrainConfig& config,
                                                    std::mt19937& rng) {
  seq.validate();
  config.validate();
  if (seq.size() < 2)
    throw ConfigError("pair sampling: need at least 2 scans, got " +
                      std::to_string(seq.size()));
  return draw_pairs(build_pair_pools(seq, config), config, rng);
}

PairBatch sample_pairs(const ScanSequence& seq, const TrainConfig& config,
                       std::mt19937& rng) {
  const auto idx = sample_index_pairs(seq, config, rng);
  const ProjectionConfig proj = projection_for_profile(config.profile);
  std::vector<Tensor> cache(seq.size());
  std::vector<bool> cached(seq.size(), false);
  auto image_of = [&](int i) {
    if (!cached[i]) {
      cache[i] = range_image_to_tensor(project(seq.scans[i], proj));
      cached[i] = true;
    }
    return cache[i];
  };
  PairBatch batch;
  batch.reserve(idx.size());
  for (auto [i, j] : idx)
    batch.push_back(
        {image_of(i), image_of(j), seq.poses[i], seq.poses[j]});
  return batch;
}

EvalModel eval_adapter(RecNetModel& model) {
  EvalModel m;
  m.reconstruct = [&model](const Tensor& image) {
    NoGradGuard no_grad;
    return model.decode(model.encode(image));
  };
  m.score = [&model](const Tensor& a, const Tensor& b) {
    NoGradGuard no_grad;
    return static_cast<double>(
        model.tail_similarity(model.encode(a), model.encode(b)).item());
  };
  return m;
}

ValidationMetrics validate(const EvalModel& model, const ScanSequence& seq,
                           const TrainConfig& config) {
  // Fixed derivation from the run seed so repeated calls pair identically.
  std::mt19937 rng(config.seed ^ 0x517cc1b7u);
  const auto idx = sample_index_pairs(seq, config, rng);
  const ProjectionConfig proj = projection_for_profile(config.profile);

  std::vector<Tensor> cache(seq.size());
  std::vector<bool> cached(seq.size(), false);
  auto image_of = [&](int i) -> const Tensor& {
    if (!cached[i]) {
      cache[i] = range_image_to_tensor(project(seq.scans[i], proj));
      cached[i] = true;
    }
    return cache[i];
  };

  ValidationMetrics out;
  for (auto [i, j] : idx) {
    const Tensor& a = image_of(i);
    Tensor rec = model.reconstruct(a);
    {
      NoGradGuard no_grad;
      out.mean_l_mse += static_cast<double>(loss_mse(a, rec).item());
    }
    const double c_hat = model.score(a, image_of(j));
    const double c =
        target_similarity(seq.poses[i], seq.poses[j], config.loss.m);
    out.mean_abs_score_error += std::abs(c_hat - c);
  }
  const double n = static_cast<double>(idx.size());
  out.mean_l_mse /= n;
  out.mean_abs_score_error /= n;
  return out;
}

void SceneSpec::validate() const {
  if (num_scans < 1)
    throw ConfigError("scene: num_scans must be >= 1, got " +
                      std::to_string(num_scans));
  if (!(trajectory_radius > 0.0))
    throw ConfigError("scene: trajectory_radius must be > 0");
  if (std::abs(trajectory_center_x) + trajectory_radius >= area_half_extent ||
      std::abs(trajectory_center_y) + trajectory_radius >= area_half_extent)
    throw ConfigError("scene: the trajectory must stay inside the walls");
  if (!(scan_period > 0.0))
    throw ConfigError("scene: scan_period must be > 0");
  if (!(area_half_extent > 0.0) || area_half_extent <= max_box_size)
    throw ConfigError("scene: area_half_extent must exceed max_box_size");
  if (num_boxes < 0) throw ConfigError("scene: num_boxes must be >= 0");
  if (!(min_box_size > 0.0) || min_box_size > max_box_size)
    throw ConfigError("scene: need 0 < min_box_size <= max_box_size");
  if (!(min_box_height > 0.0) || min_box_height > max_box_height)
    throw ConfigError("scene: need 0 < min_box_height <= max_box_height");
  if (box_clearance < 0.0)
    throw ConfigError("scene: box_clearance must be >= 0, got " +
                      std::to_string(box_clearance));
  if (wall_height < 0.0) throw ConfigError("scene: wall_height must be >= 0");
  if (sensor_height < 0.0)
    throw ConfigError("scene: sensor_height must be >= 0");
  if (!(points_per_m2 > 0.0))
    throw ConfigError("scene: points_per_m2 must be > 0");
  (void)ModelProfile::by_name(profile);
}

namespace {

// Uniform surface sampling helpers for the synthetic world. All draws go
// through one generator in a fixed order, so a seed pins the whole scene.
class WorldBuilder {
 public:
  WorldBuilder(const SceneSpec& spec, std::mt19937& rng)
      : spec_(spec), rng_(rng) {}

  std::vector<Point3> build() {
    const double e = spec_.area_half_extent;
    // Ground plane.
    sample_rect({-e, e}, {-e, e}, 0.0, Axis::kZ);
    // Perimeter walls.
    if (spec_.wall_height > 0.0) {
      sample_rect({-e, e}, {0.0, spec_.wall_height}, e, Axis::kY);
      sample_rect({-e, e}, {0.0, spec_.wall_height}, -e, Axis::kY);
      sample_rect({-e, e}, {0.0, spec_.wall_height}, e, Axis::kX);
      sample_rect({-e, e}, {0.0, spec_.wall_height}, -e, Axis::kX);
    }
    // Boxes: position and size first, then their five visible faces. A
    // positive box_clearance keeps each box center at least that far from
    // the trajectory circle, so close passes cannot produce surfaces too
    // near the sensor.
    for (int b = 0; b < spec_.num_boxes; ++b) {
      const double margin = e - spec_.max_box_size;
      double cx = uniform(-margin, margin);
      double cy = uniform(-margin, margin);
      if (spec_.box_clearance > 0.0) {
        int attempts = 0;
        while (std::abs(std::hypot(cx - spec_.trajectory_center_x,
                                   cy - spec_.trajectory_center_y) -
                        spec_.trajectory_radius) < spec_.box_clearance) {
          if (++attempts > 1000)
            throw ConfigError(
                "scene: cannot place a box respecting box_clearance " +
                std::to_string(spec_.box_clearance));
          cx = uniform(-margin, margin);
          cy = uniform(-margin, margin);
        }
      }
      const double hx = uniform(spec_.min_box_size, spec_.max_box_size) / 2.0;
      const double hy = uniform(spec_.min_box_size, spec_.max_box_size) / 2.0;
      const double hz = uniform(spec_.min_box_height, spec_.max_box_height);
      sample_rect({cx - hx, cx + hx}, {cy - hy, cy + hy}, hz, Axis::kZ);
      sample_rect({cx - hx, cx + hx}, {0.0, hz}, cy + hy, Axis::kY);
      sample_rect({cx - hx, cx + hx}, {0.0, hz}, cy - hy, Axis::kY);
      sample_rect({cy - hy, cy + hy}, {0.0, hz}, cx + hx, Axis::kX);
      sample_rect({cy - hy, cy + hy}, {0.0, hz}, cx - hx, Axis::kX);
    }
    return std::move(points_);
  }

 private:
  enum class Axis { kX, kY, kZ };  // the axis the rectangle is normal to

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }

  // Stratified sampling: one uniform point per grid cell of side
  // ~1/sqrt(points_per_m2). Purely independent draws leave Poisson gaps
  // that project as irreducible speckle in the range images; per-cell
  // jitter keeps the sampling uniform by area while bounding the largest
  // gap by one cell diagonal.
  void sample_rect(std::pair<double, double> u, std::pair<double, double> v,
                   double fixed, Axis normal) {
    const double step = 1.0 / std::sqrt(spec_.points_per_m2);
    const auto cells = [&](double lo, double hi) {
      return static_cast<int>(
          std::max<long long>(1, std::llround((hi - lo) / step)));
    };
    const int nu = cells(u.first, u.second);
    const int nv = cells(v.first, v.second);
    const double du = (u.second - u.first) / nu;
    const double dv = (v.second - v.first) / nv;
    for (int iu = 0; iu < nu; ++iu) {
      for (int iv = 0; iv < nv; ++iv) {
        const double a = u.first + (iu + uniform(0.0, 1.0)) * du;
        const double b = v.first + (iv + uniform(0.0, 1.0)) * dv;
        switch (normal) {
          case Axis::kZ:
            points_.push_back({static_cast<float>(a), static_cast<float>(b),
                               static_cast<float>(fixed)});
            break;
          case Axis::kY:
            points_.push_back({static_cast<float>(a), static_cast<float>(fixed),
                               static_cast<float>(b)});
            break;
          case Axis::kX:
            points_.push_back({static_cast<float>(fixed), static_cast<float>(a),
                               static_cast<float>(b)});
            break;
        }
      }
    }
  }

  const SceneSpec& spec_;
  std::mt19937& rng_;
  std::vector<Point3> points_;
};

Pose inverse_of(const Pose& p) {
  Pose inv;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) inv.rotation[3 * r + c] = p.rotation[3 * c + r];
  for (int r = 0; r < 3; ++r) {
    inv.translation[r] = 0.0;
    for (int c = 0; c < 3; ++c)
      inv.translation[r] -= inv.rotation[3 * r + c] * p.translation[c];
  }
  return inv;
}

}  // namespace

ScanSequence make_synthetic_sequence(const SceneSpec& spec, unsigned seed) {
  spec.validate();
  std::mt19937 rng(seed);
  const std::vector<Point3> world = WorldBuilder(spec, rng).build();
  const ProjectionConfig proj = projection_for_profile(spec.profile);

  ScanSequence seq;
  for (int k = 0; k < spec.num_scans; ++k) {
    const double phi =
        2.0 * M_PI * spec.laps * static_cast<double>(k) / spec.num_scans;
    const double heading = phi + M_PI / 2.0;  // face along the velocity
    Pose pose;
    const double ch = std::cos(heading), sh = std::sin(heading);
    pose.rotation = {ch, -sh, 0, sh, ch, 0, 0, 0, 1};
    pose.translation = {
        spec.trajectory_center_x + spec.trajectory_radius * std::cos(phi),
        spec.trajectory_center_y + spec.trajectory_radius * std::sin(phi),
        spec.sensor_height};

    // Express the fixed world in the sensor frame and keep what the
    // profile's projection would keep: the range window and a row index
    // inside [0, height).
    const Pose world_to_sensor = inverse_of(pose);
    PointCloud scan;
    for (const Point3& wp : world) {
      const Point3 p = world_to_sensor.apply(wp);
      const double r = std::sqrt(static_cast<double>(p.x) * p.x +
                                 static_cast<double>(p.y) * p.y +
                                 static_cast<double>(p.z) * p.z);
      if (r < proj.min_range || r > proj.max_range) continue;
      const double v =
          (1.0 - (std::asin(p.z / r) + proj.fov_up) / proj.fov()) *
          proj.height;
      const int row = static_cast<int>(std::floor(v));
      if (row < 0 || row >= proj.height) continue;
      scan.points.push_back(p);
    }

    seq.sources.push_back("synth:" + std::to_string(seed) + ":" +
                          std::to_string(k));
    seq.scans.push_back(std::move(scan));
    seq.poses.push_back(pose);
    seq.timestamps.push_back(spec.scan_period * k);
  }
  seq.validate();
  return seq;
}

void save_optimizer_state(Adam& opt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open \"" + path + "\" for writing");
  detail::write_magic(os, "ROPT");
  detail::write_le<std::uint16_t>(os, 1);
  detail::write_le<std::int64_t>(os, opt.step_count());
  detail::write_le<std::uint32_t>(
      os, static_cast<std::uint32_t>(opt.params().size()));
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto& m = opt.moment1(i);
    const auto& v = opt.moment2(i);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.size()));
    detail::write_f32_array(os, m.data(), m.size());
    detail::write_f32_array(os, v.data(), v.size());
  }
  if (!os) throw IoError("failed writing optimizer state to \"" + path + "\"");
}

void load_optimizer_state(Adam& opt, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open \"" + path + "\"");
  detail::expect_magic(is, "ROPT", "optimizer state");
  const auto version = detail::read_le<std::uint16_t>(is, "version");
  if (version != 1)
    throw FormatError("unsupported optimizer state version " +
                      std::to_string(version));
  const auto step = detail::read_le<std::int64_t>(is, "step count");
  const auto count = detail::read_le<std::uint32_t>(is, "parameter count");
  if (count != opt.params().size())
    throw FormatError("optimizer state holds " + std::to_string(count) +
                      " parameters, model has " +
                      std::to_string(opt.params().size()));
  for (std::size_t i = 0; i < count; ++i) {
    const auto n = detail::read_le<std::uint32_t>(is, "moment length");
    if (n != opt.moment1(i).size())
      throw FormatError("optimizer state parameter " + std::to_string(i) +
                        " has " + std::to_string(n) + " elements, expected " +
                        std::to_string(opt.moment1(i).size()));
    detail::read_f32_array(is, opt.moment1(i).data(), n, "first moment");
    detail::read_f32_array(is, opt.moment2(i).data(), n, "second moment");
  }
  opt.set_step_count(step);
}

std::string save_checkpoint(const std::string& dir, long step,
                            const RecNetModel& model, Adam& opt,
                            const std::mt19937& rng) {
  fs::create_directories(dir);
  const std::string stem = "checkpoint-" + std::to_string(step);
  const fs::path base(dir);
  model.save((base / (stem + ".rwts")).string());
  save_optimizer_state(opt, (base / (stem + ".opt")).string());

  std::ostringstream rng_text;
  rng_text << rng;

  const std::string sidecar = (base / (stem + ".txt")).string();
  std::ofstream os(sidecar);
  if (!os) throw IoError("cannot open \"" + sidecar + "\" for writing");
  os << "step=" << step << "\n";
  os << "weights=" << stem << ".rwts\n";
  os << "optimizer=" << stem << ".opt\n";
  os << "rng=" << rng_text.str() << "\n";
  if (!os) throw IoError("failed writing checkpoint sidecar \"" + sidecar +
                         "\"");
  return sidecar;
}

namespace {

struct ResumePoint {
  long step = 0;
  std::string weights, optimizer, rng_text;
};

ResumePoint parse_checkpoint_sidecar(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint sidecar \"" + path + "\"");
  ResumePoint rp;
  bool have_step = false;
  std::string line;
  const fs::path base = fs::path(path).parent_path();
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "step") {
      rp.step = std::stol(value);
      have_step = true;
    } else if (key == "weights") {
      rp.weights = (base / value).string();
    } else if (key == "optimizer") {
      rp.optimizer = (base / value).string();
    } else if (key == "rng") {
      rp.rng_text = value;
    }
  }
  if (!have_step || rp.weights.empty() || rp.optimizer.empty() ||
      rp.rng_text.empty())
    throw FormatError("checkpoint sidecar \"" + path +
                      "\" is missing step, weights, optimizer, or rng");
  return rp;
}

const char* first_bad_component(float mse, float grad, float pr, float total) {
  if (!std::isfinite(mse)) return "l_mse";
  if (!std::isfinite(grad)) return "l_grad";
  if (!std::isfinite(pr)) return "l_pr";
  if (!std::isfinite(total)) return "total";
  return nullptr;
}

}  // namespace

TrainResult train(const ScanSequence& seq_train, const ScanSequence& seq_val,
                  const TrainConfig& config,
                  const std::string& resume_checkpoint) {
  config.validate();
  seq_train.validate();
  if (seq_val.size() > 0) seq_val.validate();

  const ModelProfile& profile = ModelProfile::by_name(config.profile);
  const ProjectionConfig proj = projection_for_profile(config.profile);

  long start_step = 1;
  std::mt19937 rng(config.seed);
  RecNetModel model = RecNetModel::init(profile, config.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = config.learning_rate;
  Adam opt(model.parameters(), adam_cfg);

  if (!resume_checkpoint.empty()) {
    const ResumePoint rp = parse_checkpoint_sidecar(resume_checkpoint);
    model = RecNetModel::load(rp.weights, config.profile);
    opt = Adam(model.parameters(), adam_cfg);
    load_optimizer_state(opt, rp.optimizer);
    std::istringstream rng_in(rp.rng_text);
    rng_in >> rng;
    if (rng_in.fail())
      throw FormatError("checkpoint sidecar \"" + resume_checkpoint +
                        "\" holds an unreadable rng state");
    start_step = rp.step + 1;
  }

  // Project every training scan once; the loop only copies pixels.
  std::vector<Tensor> images;
  images.reserve(seq_train.size());
  for (const PointCloud& scan : seq_train.scans)
    images.push_back(range_image_to_tensor(project(scan, proj)));

  const PairPools pools =
      seq_train.size() >= 2 ? build_pair_pools(seq_train, config) : PairPools{};

  std::ofstream log_file;
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    const fs::path log_path = fs::path(config.out_dir) / "training_log.csv";
    const bool fresh = resume_checkpoint.empty() || !fs::exists(log_path);
    log_file.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log_file)
      throw IoError("cannot open training log \"" + log_path.string() + "\"");
    if (fresh) log_file << "step,l_mse,l_grad,l_pr,total\n";
  }

  const int h = profile.in_h, w = profile.in_w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  TrainResult result{std::move(model), {}, {}};
  for (long step = start_step; step <= config.steps; ++step) {
    if (seq_train.size() < 2)
      throw ConfigError("training needs at least 2 scans, got " +
                        std::to_string(seq_train.size()));
    const auto idx = draw_pairs(pools, config, rng);
    const int b = static_cast<int>(idx.size());

    Tensor i1 = Tensor::zeros({b, 1, h, w});
    Tensor i2 = Tensor::zeros({b, 1, h, w});
    std::vector<double> targets(idx.size());
    for (int k = 0; k < b; ++k) {
      const auto [a_idx, b_idx] = idx[static_cast<std::size_t>(k)];
      std::copy_n(images[a_idx].data().begin(), plane,
                  i1.data().begin() + static_cast<std::ptrdiff_t>(k * plane));
      std::copy_n(images[b_idx].data().begin(), plane,
                  i2.data().begin() + static_cast<std::ptrdiff_t>(k * plane));
      targets[static_cast<std::size_t>(k)] = target_similarity(
          seq_train.poses[a_idx], seq_train.poses[b_idx], config.loss.m);
    }

    auto [rec, c_hat] = result.model.siamese_forward(i1, i2, /*training=*/true);
    Tensor l_mse = loss_mse(i1, rec);
    Tensor l_grad = loss_grad(i1, rec);
    Tensor l_pr = loss_pr_batch(targets, c_hat);
    Tensor total = add(add(l_mse, scale(l_grad, config.loss.lambda_grad)),
                       scale(l_pr, config.loss.alpha));

    const LossRow row = {step, l_mse.item(), l_grad.item(), l_pr.item(),
                         total.item()};
    if (const char* bad =
            first_bad_component(row.l_mse, row.l_grad, row.l_pr, row.total))
      throw TrainingError("training aborted at step " + std::to_string(step) +
                          ": " + bad + " is not finite");

    total.backward();
    opt.step();
    opt.zero_grad();

    result.log.push_back(row);
    if (log_file)
      write_loss_row(log_file, step, LossReport{l_mse, l_grad, l_pr, total});
    if (config.checkpoint_interval > 0 && !config.out_dir.empty() &&
        step % config.checkpoint_interval == 0)
      save_checkpoint(config.out_dir, step, result.model, opt, rng);
  }

  if (!config.out_dir.empty())
    result.model.save((fs::path(config.out_dir) / "final.rwts").string());

  if (seq_val.size() >= 2) {
    EvalModel eval = eval_adapter(result.model);
    result.final_validation = validate(eval, seq_val, config);
  }
  return result;
}

}  // namespace recnet
