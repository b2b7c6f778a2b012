#include "recnet/optim.hpp"

#include <cmath>

#include "recnet/errors.hpp"

namespace recnet {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.data().size(), 0.0f);
    v_.emplace_back(p.data().size(), 0.0f);
  }
}

void Adam::step() {
  ++step_count_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));

  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    const std::vector<float>& grad = p.grad();
    if (grad.empty()) continue;  // parameter untouched by this backward pass
    std::vector<float>& m = m_[pi];
    std::vector<float>& v = v_[pi];
    std::vector<float>& data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bc1;
      const double v_hat = vi / bc2;
      data[i] = static_cast<float>(
          data[i] - config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace recnet
