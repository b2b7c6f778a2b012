#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "recnet/ops.hpp"
#include "recnet/tensor.hpp"

namespace recnet {

// One convolutional stage of a leg: the convolution itself plus the optional
// batch normalization and PReLU that follow it. For decoder stages the
// convolution is transposed and (out_h, out_w) is the explicit target size;
// for encoder and tail stages it is the expected output size, asserted after
// the fact.
struct Conv2dSpec {
  int out_channels = 0;
  int kh = 0, kw = 0;
  int sh = 1, sw = 1;
  int out_h = 0, out_w = 0;
  bool batchnorm = false;
  bool prelu = true;
};

// A complete architecture schedule: input plane, bottleneck size, and the
// three layer chains. Two profiles ship: "kitti" (64x900 range images,
// bottleneck 256x64) and "mini" (32x450 images from a 32-beam sensor,
// bottleneck 128x32, two fewer layers per leg).
struct ModelProfile {
  std::string name;
  std::uint16_t id = 0;
  int in_h = 0, in_w = 0;
  int bottleneck_c = 0, bottleneck_w = 0;
  std::vector<Conv2dSpec> encoder;
  std::vector<Conv2dSpec> decoder;
  std::vector<Conv2dSpec> tail;

  // Flattened feature count entering the tail's dense layer.
  int tail_dense_in() const;

  static const ModelProfile& kitti();
  static const ModelProfile& mini();
  // Lookup by name; throws ConfigError for an unknown profile.
  static const ModelProfile& by_name(const std::string& name);
};

// The full model: a weight-shared encoder applied to one or two range
// images, a decoder reconstructing the image from the bottleneck, and a
// similarity tail scoring a bottleneck pair. All parameters live in this
// object; the two encoder legs are the same code path over the same
// tensors, so sharing holds by construction.
class RecNetModel {
 public:
  // Fresh weights: Kaiming-uniform fan-in kernels, zero biases, PReLU
  // slopes 0.25, batchnorm gamma 1 / beta 0 / running stats (0, 1).
  // Deterministic per seed.
  static RecNetModel init(const ModelProfile& profile, std::uint32_t seed);

  // Weight-file round trip. `expected_profile` (when non-empty) forces the
  // architecture the tensors are applied to; a file written for a different
  // profile then fails with an error naming the first mismatched tensor.
  static RecNetModel load(const std::string& path,
                          const std::string& expected_profile = "");
  void save(const std::string& path) const;

  const ModelProfile& profile() const { return profile_; }

  // Input: (1,h,w) or batched (B,1,h,w), values normalized to [0,1] by the
  // caller (range / max_range). Output: (bottleneck_c, bottleneck_w), or
  // (B, c, w) for batched input.
  Tensor encode(const Tensor& image, bool training = false);

  // Bottleneck (c,w) or (B,c,w) back to a range image (1,h,w) or (B,1,h,w)
  // in normalized units. Outside training the values are clamped to [0,1];
  // during training the raw regression output is returned so losses see
  // unclipped errors.
  Tensor decode(const Tensor& beta, bool training = false);

  // Similarity score in (0,1) for a bottleneck pair; scalar for unbatched
  // inputs, (B,1) for batched.
  Tensor tail_similarity(const Tensor& beta1, const Tensor& beta2,
                         bool training = false);

  // beta1 = encode(i1), beta2 = encode(i2) through the same weights;
  // returns (decode(beta1), tail(beta1, beta2)).
  std::pair<Tensor, Tensor> siamese_forward(const Tensor& i1, const Tensor& i2,
                                            bool training = false);

  // Trainable tensors in a fixed, documented order (weights, biases,
  // batchnorm affine parameters, PReLU slopes). The tensors are live
  // handles: optimizer updates are seen by subsequent forwards.
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<Tensor> parameters();

  // Batchnorm running statistics as (name, live pointer) views, in the same
  // traversal order as named_parameters.
  struct StateView {
    std::string name;
    std::vector<float>* values;
  };
  std::vector<StateView> named_state();

 private:
  struct Block {
    Conv2dSpec spec;
    Tensor weight;
    Tensor bias;
    std::optional<Tensor> bn_gamma, bn_beta;
    std::optional<BatchNormState> bn_state;
    std::optional<Tensor> slope;
  };

  explicit RecNetModel(const ModelProfile& profile);

  Tensor run_leg(const Tensor& x, std::vector<Block>& blocks, bool transposed,
                 const char* leg, bool training);

  ModelProfile profile_;
  std::vector<Block> encoder_;
  std::vector<Block> decoder_;
  std::vector<Block> tail_;
  Tensor dense_weight_;
  Tensor dense_bias_;
};

}  // namespace recnet
