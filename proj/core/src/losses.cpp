#include "recnet/losses.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "recnet/errors.hpp"
#include "recnet/ops.hpp"

namespace recnet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (a.shape() != b.shape()) {
    std::ostringstream msg;
    msg << where << ": image shapes differ, (";
    for (std::size_t i = 0; i < a.shape().size(); ++i)
      msg << (i ? "," : "") << a.shape()[i];
    msg << ") vs (";
    for (std::size_t i = 0; i < b.shape().size(); ++i)
      msg << (i ? "," : "") << b.shape()[i];
    msg << ")";
    throw ShapeError(msg.str());
  }
}

// image_gradients expects (B, C, H, W); lift a (C, H, W) image in a
// graph-preserving way.
Tensor as_batched(const Tensor& t, const char* where) {
  if (t.rank() == 4) return t;
  if (t.rank() == 3)
    return reshape(t, {1, t.shape()[0], t.shape()[1], t.shape()[2]});
  throw ShapeError(std::string(where) +
                   ": expected a (C,H,W) or (B,C,H,W) image, got rank " +
                   std::to_string(t.rank()));
}

}  // namespace

void LossConfig::validate() const {
  if (!(alpha >= 0.0))
    throw ConfigError("loss config: alpha must be >= 0, got " +
                      std::to_string(alpha));
  if (!(lambda_grad >= 0.0))
    throw ConfigError("loss config: lambda_grad must be >= 0, got " +
                      std::to_string(lambda_grad));
  if (!(m > 0.0))
    throw ConfigError("loss config: m must be > 0, got " + std::to_string(m));
}

Tensor loss_mse(const Tensor& image, const Tensor& recon) {
  require_same_shape(image, recon, "loss_mse");
  Tensor d = sub(image, recon);
  return mean(mul(d, d));
}

Tensor loss_grad(const Tensor& image, const Tensor& recon) {
  require_same_shape(image, recon, "loss_grad");
  Tensor a = as_batched(image, "loss_grad");
  Tensor b = as_batched(recon, "loss_grad");
  auto [du_a, dv_a] = image_gradients(a);
  auto [du_b, dv_b] = image_gradients(b);
  Tensor l1 = add(sum(abs(sub(du_a, du_b))), sum(abs(sub(dv_a, dv_b))));
  return scale(l1, 1.0 / static_cast<double>(image.numel()));
}

double target_similarity(const Pose& p1, const Pose& p2, double m) {
  if (!(m > 0.0))
    throw ConfigError("target_similarity: m must be > 0, got " +
                      std::to_string(m));
  return std::exp(-p1.distance_to(p2) / m);
}

Tensor loss_pr(double c_target, const Tensor& c_hat) {
  if (c_hat.numel() != 1)
    throw ShapeError("loss_pr: predicted score must be a single element, got " +
                     std::to_string(c_hat.numel()));
  Tensor target = Tensor::full(c_hat.shape(), static_cast<float>(c_target));
  Tensor d = sub(target, c_hat);
  return mul(d, d);
}

Tensor loss_pr_batch(const std::vector<double>& targets, const Tensor& c_hat) {
  const int b = static_cast<int>(targets.size());
  if (c_hat.rank() != 2 || c_hat.shape()[0] != b || c_hat.shape()[1] != 1)
    throw ShapeError("loss_pr_batch: expected predicted scores shaped (" +
                     std::to_string(b) + ",1)");
  Tensor target = Tensor::zeros({b, 1});
  for (int i = 0; i < b; ++i)
    target.data()[i] = static_cast<float>(targets[i]);
  Tensor d = sub(target, c_hat);
  return mean(mul(d, d));
}

LossReport total_loss(const Tensor& image, const Tensor& recon, const Pose& p1,
                      const Pose& p2, const Tensor& c_hat,
                      const LossConfig& config) {
  config.validate();
  LossReport r;
  r.l_mse = loss_mse(image, recon);
  r.l_grad = loss_grad(image, recon);
  r.l_pr = loss_pr(target_similarity(p1, p2, config.m), c_hat);
  r.total = add(add(r.l_mse, scale(r.l_grad, config.lambda_grad)),
                scale(r.l_pr, config.alpha));
  return r;
}

void write_loss_row(std::ostream& out, long step, const LossReport& report) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%ld,%.9g,%.9g,%.9g,%.9g\n", step,
                report.l_mse.value(), report.l_grad.value(),
                report.l_pr.value(), report.total.value());
  out << buf;
}

}  // namespace recnet
