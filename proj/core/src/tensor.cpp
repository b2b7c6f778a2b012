#include "recnet/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "recnet/errors.hpp"

namespace recnet {

namespace {

thread_local bool g_grad_recording = true;
thread_local bool g_probe_mode = false;

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_string(shape));
    n *= d;
  }
  return n;
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

bool grad_recording_enabled() { return g_grad_recording; }

NoGradGuard::NoGradGuard() : previous_(g_grad_recording) {
  g_grad_recording = false;
}
NoGradGuard::~NoGradGuard() { g_grad_recording = previous_; }

bool probe_mode_enabled() { return g_probe_mode; }

NumericProbeGuard::NumericProbeGuard() : previous_(g_probe_mode) {
  g_probe_mode = true;
}
NumericProbeGuard::~NumericProbeGuard() { g_probe_mode = previous_; }

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  return full(shape, 0.0f, requires_grad);
}

Tensor Tensor::full(const std::vector<int>& shape, float value,
                    bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::from_data(const std::vector<int>& shape,
                         std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("data length " + std::to_string(values.size()) +
                     " does not fill shape " + shape_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a single-element tensor, have " +
                     shape_string(shape()));
  }
  return impl_->data[0];
}

double Tensor::value() const {
  if (numel() != 1) {
    throw ShapeError("value() needs a single-element tensor, have " +
                     shape_string(shape()));
  }
  if (!impl_->dshadow.empty()) return impl_->dshadow[0];
  return impl_->shadow ? *impl_->shadow
                       : static_cast<double>(impl_->data[0]);
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  impl->shadow = impl_->shadow;
  impl->dshadow = impl_->dshadow;
  return Tensor(std::move(impl));
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() starts from a single-element tensor, have " +
                     shape_string(shape()));
  }

  // Post-order depth-first walk; reversed, it visits every node before any
  // of its inputs, so each node sees its complete output gradient.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (!node->grad_fn || next >= node->grad_fn->inputs.size()) {
      order.push_back(node);
      stack.pop_back();
      continue;
    }
    TensorImpl* child = node->grad_fn->inputs[next++].get();
    if (child->needs_grad() && visited.insert(child).second) {
      stack.emplace_back(child, 0);
    }
  }

  impl_->grad.assign(1, 1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0f);
    node->grad_fn->backward_fn(node->grad);
  }
}

Tensor randn(const std::vector<int>& shape, std::mt19937& rng, double stddev,
             bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Tensor rand_uniform(const std::vector<int>& shape, std::mt19937& rng,
                    double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(shape, requires_grad);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

}  // namespace recnet
