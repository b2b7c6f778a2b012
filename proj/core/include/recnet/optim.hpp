#pragma once

#include <cstdint>
#include <vector>

#include "recnet/tensor.hpp"

namespace recnet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are stored float32 (so they
// serialize exactly like parameters); each update is computed in double.
class Adam {
 public:
  Adam() = default;
  explicit Adam(std::vector<Tensor> params, AdamConfig config = {});

  void step();       // applies one update from the accumulated gradients
  void zero_grad();  // clears every parameter's gradient buffer

  const AdamConfig& config() const { return config_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<Tensor>& params() const { return params_; }

  // Serialization access: first and second moments per parameter, in
  // parameter order, plus the step counter.
  std::vector<float>& moment1(std::size_t i) { return m_[i]; }
  std::vector<float>& moment2(std::size_t i) { return v_[i]; }
  void set_step_count(std::int64_t t) { step_count_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  AdamConfig config_;
  std::int64_t step_count_ = 0;
};

}  // namespace recnet
