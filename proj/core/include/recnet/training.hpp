#pragma once

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "recnet/losses.hpp"
#include "recnet/model.hpp"
#include "recnet/optim.hpp"
#include "recnet/point_cloud.hpp"
#include "recnet/projection.hpp"
#include "recnet/tensor.hpp"

namespace recnet {

// Ordered, posed scan sequence with materialized clouds. `sources` records
// where each scan came from (a file path or a synthetic tag) purely for
// provenance; the clouds themselves are held in memory.
struct ScanSequence {
  std::vector<std::string> sources;
  std::vector<PointCloud> scans;
  std::vector<Pose> poses;
  std::vector<double> timestamps;  // seconds, nondecreasing

  std::size_t size() const { return scans.size(); }

  // Throws ConfigError unless all four vectors agree in length and the
  // timestamps never decrease.
  void validate() const;
};

// Hyperparameters and plumbing for a training run. The defaults are
// conventional choices for this scale, exposed rather than baked in.
struct TrainConfig {
  LossConfig loss;
  double learning_rate = 1e-3;
  int batch_size = 8;
  int steps = 0;
  unsigned seed = 0;
  double r_pos = 5.0;        // pairs closer than this are "near" (meters)
  double r_neg = 20.0;       // pairs farther than this are "far" (meters)
  int checkpoint_interval = 500;  // steps between checkpoints; 0 disables
  std::string profile = "mini";
  std::string out_dir;  // checkpoints and the CSV log land here; "" disables

  // Throws ConfigError on nonpositive rate/batch, negative steps or
  // interval, r_pos >= r_neg, or an unknown profile.
  void validate() const;
};

struct TrainPair {
  Tensor image1, image2;
  Pose pose1, pose2;
};
using PairBatch = std::vector<TrainPair>;

// The spherical-projection geometry a model profile is trained against.
ProjectionConfig projection_for_profile(const std::string& profile);

// Network-boundary conversion: ranges divided by max_range into a (1,H,W)
// tensor in [0,1] (empty pixels stay 0), and back. The return trip clamps:
// values that map below min_range become empty pixels, values above
// max_range saturate.
Tensor range_image_to_tensor(const RangeImage& image);
RangeImage tensor_to_range_image(const Tensor& t,
                                 const ProjectionConfig& config);

// Index-pair sampling core: half the batch (rounded up) from pairs at most
// r_pos apart, the rest from pairs at least r_neg apart, uniformly with
// replacement. A sequence with no far pairs fills the whole batch with
// near pairs; one with no near pairs is a ConfigError naming the radii.
std::vector<std::pair<int, int>> sample_index_pairs(const ScanSequence& seq,
                                                    const TrainConfig& config,
                                                    std::mt19937& rng);

// Same sampling, materialized: each pair carries the two projected,
// normalized images and the two poses.
PairBatch sample_pairs(const ScanSequence& seq, const TrainConfig& config,
                       std::mt19937& rng);

// Scalar loss breakdown recorded once per optimization step.
struct LossRow {
  long step;
  float l_mse, l_grad, l_pr, total;
};

// Mean reconstruction error and mean |predicted - target| similarity gap
// over a fixed-seed validation pairing.
struct ValidationMetrics {
  double mean_l_mse = 0.0;
  double mean_abs_score_error = 0.0;
};

struct TrainResult {
  RecNetModel model;
  std::vector<LossRow> log;
  ValidationMetrics final_validation;
};

// Evaluation-facing view of a model: reconstruct one image, score one
// image pair. Indirection so validation can be exercised against exact
// stand-ins as well as real weights.
struct EvalModel {
  std::function<Tensor(const Tensor&)> reconstruct;
  std::function<double(const Tensor&, const Tensor&)> score;
};

// Wraps a trained model in eval mode (no graph, no state updates).
EvalModel eval_adapter(RecNetModel& model);

// Eval-mode metrics over a fixed-seed pairing of the sequence; calling it
// twice gives identical numbers and never touches weights.
ValidationMetrics validate(const EvalModel& model, const ScanSequence& seq,
                           const TrainConfig& config);

// Parametric synthetic world: a ground plane inside four perimeter walls
// with axis-aligned boxes, observed from a circular trajectory. Surfaces
// are point-sampled once per sequence (uniformly, by area); each scan is
// the fixed world point set expressed in the sensor frame and filtered to
// the profile's range window and vertical field of view — so identical
// poses yield identical scans.
struct SceneSpec {
  std::string profile = "mini";
  int num_scans = 20;
  double trajectory_radius = 8.0;    // meters
  double trajectory_center_x = 0.0;  // orbit center; offsetting it from the
  double trajectory_center_y = 0.0;  // room center makes every viewpoint
                                     // geometrically distinct
  double laps = 1.0;                 // fraction or multiple of full circles
  double scan_period = 1.0;        // seconds between scans
  double area_half_extent = 20.0;  // ground square spans +/- this
  int num_boxes = 10;
  double min_box_size = 0.6;
  double max_box_size = 3.0;
  double min_box_height = 0.8;
  double max_box_height = 6.0;
  double box_clearance = 0.0;  // min distance of box centers from the path
  double wall_height = 10.0;   // tall enough to fill upward-looking FOVs
  double sensor_height = 1.5;  // sensor origin above the ground
  double points_per_m2 = 25.0;

  // Throws ConfigError on nonpositive extents/densities/counts or
  // inverted box size bounds.
  void validate() const;
};

ScanSequence make_synthetic_sequence(const SceneSpec& spec, unsigned seed);

// Optimizer-state container: per-parameter first/second moments plus the
// step counter, float32 little-endian.
void save_optimizer_state(Adam& opt, const std::string& path);
void load_optimizer_state(Adam& opt, const std::string& path);

// Writes checkpoint-<step>.rwts / .opt / .txt into `dir` and returns the
// sidecar (.txt) path. The sidecar records the step, the two file names,
// and the serialized sampler state, enough to resume bit-exactly.
std::string save_checkpoint(const std::string& dir, long step,
                            const RecNetModel& model, Adam& opt,
                            const std::mt19937& rng);

// Runs `config.steps` optimization steps of the two-leg objective over
// `seq_train` (reconstruction of leg 1 plus similarity regression),
// checkpointing every `checkpoint_interval` steps; aborts with
// TrainingError if any loss component leaves the finite range. Passing a
// checkpoint sidecar path resumes from it; an interrupted-and-resumed run
// reproduces the uninterrupted one bit for bit (single-threaded).
// seq_val, when nonempty, is scored at the end with validate().
TrainResult train(const ScanSequence& seq_train, const ScanSequence& seq_val,
                  const TrainConfig& config,
                  const std::string& resume_checkpoint = "");

}  // namespace recnet
