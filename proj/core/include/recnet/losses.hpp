#pragma once

#include <ostream>
#include <vector>

#include "recnet/point_cloud.hpp"
#include "recnet/tensor.hpp"

namespace recnet {

// Weights of the combined training objective. The reconstruction part is
// pixel MSE plus lambda_grad times an L1 penalty on image-gradient
// differences; the similarity-regression part enters with weight alpha.
// The alpha and lambda_grad defaults are conventional, not tuned; m is
// the distance scale (meters) that maps pose separation to a target
// similarity score.
struct LossConfig {
  double alpha = 1.0;
  double lambda_grad = 1.0;
  double m = 10.0;

  // Throws ConfigError unless alpha >= 0, lambda_grad >= 0, m > 0.
  void validate() const;
};

// Per-batch loss breakdown. Every field is a single-element tensor that
// stays attached to the graph, so any of them can drive backward();
// total = l_mse + lambda_grad * l_grad + alpha * l_pr.
struct LossReport {
  Tensor l_mse;
  Tensor l_grad;
  Tensor l_pr;
  Tensor total;
};

// Mean squared pixel error (1/N) * sum((I - R)^2) over identically
// shaped images.
Tensor loss_mse(const Tensor& image, const Tensor& recon);

// L1 difference of forward-difference image gradients, normalized by the
// pixel count: (1/N) * (sum|du_I - du_R| + sum|dv_I - dv_R|). Accepts
// (C,H,W) or (B,C,H,W) with H,W >= 2. Blind to constant offsets, which
// is why it is paired with the pixel term.
Tensor loss_grad(const Tensor& image, const Tensor& recon);

// Target similarity for a scan pair: exp(-d/m) where d is the Euclidean
// distance between the pose translations. 1 at d = 0, decaying toward 0.
double target_similarity(const Pose& p1, const Pose& p2, double m);

// Squared error between the target score and the predicted score (a
// single-element tensor in [0,1]).
Tensor loss_pr(double c_target, const Tensor& c_hat);

// Batch-mean similarity regression: c_hat is (B,1) and targets has B
// entries; returns the mean of the per-pair squared errors.
Tensor loss_pr_batch(const std::vector<double>& targets, const Tensor& c_hat);

// Full objective for one training pair: reconstruction of image 1 plus
// the weighted similarity regression against the pose-derived target.
LossReport total_loss(const Tensor& image, const Tensor& recon,
                      const Pose& p1, const Pose& p2, const Tensor& c_hat,
                      const LossConfig& config = {});

// One comma-separated training-log row: step,l_mse,l_grad,l_pr,total.
void write_loss_row(std::ostream& out, long step, const LossReport& report);

}  // namespace recnet
