#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace recnet {

struct TensorImpl;

// One step of the reverse pass. A node remembers the tensors an operation
// consumed and how to push the output gradient into them; it never points
// forward, so the graph is a clean DAG with no reference cycles.
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Receives the gradient w.r.t. the node's output and accumulates into
  // the inputs' grad buffers.
  std::function<void(const std::vector<float>&)> backward_fn;
};

struct TensorImpl {
  std::vector<int> shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first accumulation
  std::shared_ptr<Node> grad_fn;
  // Scalar outputs carry a double-precision shadow of their value so that
  // difference quotients in gradient checks are not limited by float32
  // storage of the objective.
  std::optional<double> shadow;
  // Full double-precision image of the data, maintained only while a
  // NumericProbeGuard is active (see below); empty otherwise.
  std::vector<double> dshadow;

  bool needs_grad() const { return requires_grad || grad_fn != nullptr; }
  std::int64_t numel() const {
    return static_cast<std::int64_t>(data.size());
  }
};

// Dense row-major float32 tensor with reverse-mode autodiff. Copying a
// Tensor copies a handle to shared storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const std::vector<int>& shape,
                      bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, float value,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);
  static Tensor from_data(const std::vector<int>& shape,
                          std::vector<float> values,
                          bool requires_grad = false);

  const std::vector<int>& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->numel(); }
  int dim(int i) const { return impl_->shape[i]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::vector<float>& data() { return impl_->data; }
  const std::vector<float>& data() const { return impl_->data; }
  float item() const;          // single-element value (throws otherwise)
  double value() const;        // like item() but prefers the double shadow

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }
  // Gradient buffer; empty vector until backward() has touched this leaf.
  const std::vector<float>& grad() const { return impl_->grad; }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0f); }

  // Reverse pass from this tensor, which must hold a single element; seeds
  // the output gradient with 1.
  void backward() const;

  Tensor clone() const;  // deep copy of values; drops the graph

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// True while gradients are being recorded (default). Ops skip graph
// construction entirely when recording is off.
bool grad_recording_enabled();

/// RAII switch for inference and numeric probes: no graph is built while
// one of these is alive on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// True while a NumericProbeGuard is alive on the current thread.
bool probe_mode_enabled();

// RAII switch used by difference-quotient evaluations: while active, every op
// additionally carries a full double-precision image of its output
// (TensorImpl::dshadow) computed from the double images of its inputs, so a
// scalar objective can be read without the float32 rounding of intermediate
// activations. Stored float32 values and recorded gradients are unaffected;
// this only adds precision to values *read* during the probe.
class NumericProbeGuard {
 public:
  NumericProbeGuard();
  ~NumericProbeGuard();
  NumericProbeGuard(const NumericProbeGuard&) = delete;
  NumericProbeGuard& operator=(const NumericProbeGuard&) = delete;

 private:
  bool previous_;
};

// Pretty "2x3x4" shape string for error messages.
std::string shape_string(const std::vector<int>& shape);

// Gaussian / uniform initializers drawing from the caller's generator.
Tensor randn(const std::vector<int>& shape, std::mt19937& rng,
             double stddev = 1.0, bool requires_grad = false);
Tensor rand_uniform(const std::vector<int>& shape, std::mt19937& rng,
                    double lo, double hi, bool requires_grad = false);

}  // namespace recnet
