#include "recnet/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "recnet/detail/binary.hpp"
#include "recnet/errors.hpp"

namespace recnet {

namespace {

// Spec rows: {out_channels, kh, kw, sh, sw, out_h, out_w, batchnorm, prelu}.
// Batch normalization follows every second stage of a leg; the regression
// output of the decoder stays linear (no normalization, no activation),
// while the encoder's final stage keeps its normalization so the bottleneck
// is normalized too.

std::vector<Conv2dSpec> kitti_encoder() {
  return {
      {16, 5, 15, 2, 2, 30, 443, false, true},
      {16, 3, 15, 2, 2, 14, 215, true, true},
      {32, 3, 13, 2, 2, 6, 102, false, true},
      {32, 2, 13, 2, 1, 3, 90, true, true},
      {64, 2, 9, 2, 1, 1, 82, false, true},
      {64, 1, 7, 1, 1, 1, 76, true, true},
      {128, 1, 5, 1, 1, 1, 72, false, true},
      {128, 1, 5, 1, 1, 1, 68, true, true},
      {256, 1, 3, 1, 1, 1, 66, false, true},
      {256, 1, 3, 1, 1, 1, 64, true, false},
  };
}

std::vector<Conv2dSpec> kitti_decoder() {
  return {
      {256, 1, 3, 1, 1, 1, 66, false, true},
      {128, 1, 3, 1, 1, 1, 68, true, true},
      {128, 1, 3, 1, 1, 1, 70, false, true},
      {64, 1, 5, 1, 1, 1, 74, true, true},
      {64, 1, 7, 1, 1, 1, 82, false, true},
      {32, 2, 9, 2, 1, 2, 90, true, true},
      {32, 2, 12, 2, 1, 5, 102, false, true},
      {16, 3, 13, 2, 2, 13, 215, true, true},
      {16, 3, 15, 2, 2, 30, 443, false, true},
      {1, 5, 15, 2, 2, 64, 900, false, false},
  };
}

std::vector<Conv2dSpec> kitti_tail() {
  return {
      {32, 9, 9, 5, 5, 50, 12, false, true},
      {64, 5, 5, 3, 3, 16, 3, false, true},
      {128, 3, 3, 1, 1, 14, 1, false, true},
  };
}

std::vector<Conv2dSpec> mini_encoder() {
  return {
      {16, 5, 15, 2, 2, 14, 218, false, true},
      {16, 3, 15, 2, 2, 6, 102, true, true},
      {32, 2, 13, 2, 1, 3, 90, false, true},
      {32, 2, 9, 2, 1, 1, 82, true, true},
      {64, 1, 13, 1, 1, 1, 70, false, true},
      {64, 1, 13, 1, 1, 1, 58, true, true},
      {128, 1, 14, 1, 1, 1, 45, false, true},
      {128, 1, 14, 1, 1, 1, 32, true, false},
  };
}

std::vector<Conv2dSpec> mini_decoder() {
  return {
      {128, 1, 14, 1, 1, 1, 45, false, true},
      {64, 1, 14, 1, 1, 1, 58, true, true},
      {64, 1, 13, 1, 1, 1, 70, false, true},
      {32, 1, 13, 1, 1, 1, 82, true, true},
      {32, 2, 9, 2, 1, 3, 90, false, true},
      {16, 2, 13, 2, 1, 6, 102, true, true},
      {16, 3, 15, 2, 2, 14, 218, false, true},
      {1, 5, 15, 2, 2, 32, 450, false, false},
  };
}

std::vector<Conv2dSpec> mini_tail() {
  // The width axis collapses to 1 after the second stage, so the last
  // kernel is (3,1); a square (3,3) kernel would not fit.
  return {
      {32, 9, 9, 5, 5, 24, 5, false, true},
      {64, 5, 5, 3, 3, 7, 1, false, true},
      {128, 3, 1, 1, 1, 5, 1, false, true},
  };
}

constexpr std::uint16_t kWeightsVersion = 1;

std::string profile_name_for_id(std::uint16_t id) {
  switch (id) {
    case 1:
      return "kitti";
    case 2:
      return "mini";
    default:
      throw FormatError("unknown model profile id " + std::to_string(id) +
                        " in weight file");
  }
}

}  // namespace

int ModelProfile::tail_dense_in() const {
  const Conv2dSpec& last = tail.back();
  return last.out_channels * last.out_h * last.out_w;
}

const ModelProfile& ModelProfile::kitti() {
  static const ModelProfile profile = [] {
    ModelProfile p;
    p.name = "kitti";
    p.id = 1;
    p.in_h = 64;
    p.in_w = 900;
    p.bottleneck_c = 256;
    p.bottleneck_w = 64;
    p.encoder = kitti_encoder();
    p.decoder = kitti_decoder();
    p.tail = kitti_tail();
    return p;
  }();
  return profile;
}

const ModelProfile& ModelProfile::mini() {
  static const ModelProfile profile = [] {
    ModelProfile p;
    p.name = "mini";
    p.id = 2;
    p.in_h = 32;
    p.in_w = 450;
    p.bottleneck_c = 128;
    p.bottleneck_w = 32;
    p.encoder = mini_encoder();
    p.decoder = mini_decoder();
    p.tail = mini_tail();
    return p;
  }();
  return profile;
}

const ModelProfile& ModelProfile::by_name(const std::string& name) {
  if (name == "kitti") return kitti();
  if (name == "mini") return mini();
  throw ConfigError("unknown model profile \"" + name +
                    "\" (known: kitti, mini)");
}

RecNetModel::RecNetModel(const ModelProfile& profile) : profile_(profile) {
  auto build = [](const std::vector<Conv2dSpec>& specs, int in_c,
                  bool transposed) {
    std::vector<Block> blocks;
    blocks.reserve(specs.size());
    for (const Conv2dSpec& spec : specs) {
      Block b;
      b.spec = spec;
      b.weight = transposed
                     ? Tensor::zeros({in_c, spec.out_channels, spec.kh,
                                      spec.kw},
                                     true)
                     : Tensor::zeros({spec.out_channels, in_c, spec.kh,
                                      spec.kw},
                                     true);
      b.bias = Tensor::zeros({spec.out_channels}, true);
      if (spec.batchnorm) {
        b.bn_gamma = Tensor::full({spec.out_channels}, 1.0f, true);
        b.bn_beta = Tensor::zeros({spec.out_channels}, true);
        b.bn_state.emplace(spec.out_channels);
      }
      if (spec.prelu) b.slope = Tensor::scalar(0.25f, true);
      blocks.push_back(std::move(b));
      in_c = spec.out_channels;
    }
    return blocks;
  };

  encoder_ = build(profile_.encoder, 1, false);
  decoder_ = build(profile_.decoder, profile_.bottleneck_c, true);
  tail_ = build(profile_.tail, 1, false);
  dense_weight_ = Tensor::zeros({1, profile_.tail_dense_in()}, true);
  dense_bias_ = Tensor::zeros({1}, true);
}

RecNetModel RecNetModel::init(const ModelProfile& profile,
                              std::uint32_t seed) {
  RecNetModel model(profile);
  std::mt19937 rng(seed);

  // Kaiming-uniform over the fan-in of each kernel: bound sqrt(6 / fan_in)
  // with fan_in = (stage input channels) * kh * kw; biases stay zero.
  auto fill = [&rng](Tensor& t, int fan_in) {
    std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan_in),
                                                std::sqrt(6.0 / fan_in));
    for (float& v : t.data()) v = static_cast<float>(dist(rng));
  };

  auto fill_blocks = [&fill](std::vector<Block>& blocks, bool transposed) {
    for (Block& b : blocks) {
      const int in_c = b.weight.dim(transposed ? 0 : 1);
      fill(b.weight, in_c * b.spec.kh * b.spec.kw);
    }
  };
  fill_blocks(model.encoder_, false);
  fill_blocks(model.decoder_, true);
  fill_blocks(model.tail_, false);
  // The similarity head's dense layer starts at zero so the initial score
  // is exactly 0.5 for every pair. A random start lets early optimizer
  // steps push the logit past sigmoid's float32 saturation points, where
  // the gradient is exactly zero and the head can never recover; from
  // zero it grows in the direction the data asks for.
  return model;
}

Tensor RecNetModel::run_leg(const Tensor& x, std::vector<Block>& blocks,
                            bool transposed, const char* leg, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    Block& b = blocks[i];
    const std::string where =
        std::string(leg) + " layer " + std::to_string(i + 1);
    try {
      Tensor y = transposed
                     ? conv_transpose2d(h, b.weight, b.bias, b.spec.sh,
                                        b.spec.sw, b.spec.out_h, b.spec.out_w)
                     : conv2d(h, b.weight, b.bias, b.spec.sh, b.spec.sw);
      if (b.bn_gamma)
        y = batchnorm2d(y, *b.bn_gamma, *b.bn_beta, *b.bn_state, training);
      if (b.slope) y = prelu(y, *b.slope);
      h = y;
    } catch (const ShapeError& e) {
      throw ShapeError(where + ": " + e.what());
    }
    if (h.dim(1) != b.spec.out_channels || h.dim(2) != b.spec.out_h ||
        h.dim(3) != b.spec.out_w) {
      throw Error(where + " produced " + shape_string(h.shape()) +
                  ", schedule expects " +
                  std::to_string(b.spec.out_channels) + "x" +
                  std::to_string(b.spec.out_h) + "x" +
                  std::to_string(b.spec.out_w));
    }
  }
  return h;
}

Tensor RecNetModel::encode(const Tensor& image, bool training) {
  bool batched = false;
  Tensor x = image;
  if (image.rank() == 3) {
    if (image.dim(0) != 1 || image.dim(1) != profile_.in_h ||
        image.dim(2) != profile_.in_w) {
      throw ShapeError("encode: input " + shape_string(image.shape()) +
                       " does not match profile " + profile_.name +
                       " input 1x" + std::to_string(profile_.in_h) + "x" +
                       std::to_string(profile_.in_w));
    }
    x = reshape(image, {1, 1, profile_.in_h, profile_.in_w});
  } else if (image.rank() == 4) {
    batched = true;
    if (image.dim(1) != 1 || image.dim(2) != profile_.in_h ||
        image.dim(3) != profile_.in_w) {
      throw ShapeError("encode: batched input " +
                       shape_string(image.shape()) +
                       " does not match profile " + profile_.name +
                       " input Bx1x" + std::to_string(profile_.in_h) + "x" +
                       std::to_string(profile_.in_w));
    }
  } else {
    throw ShapeError("encode: need (1,h,w) or (B,1,h,w), have " +
                     shape_string(image.shape()));
  }

  Tensor beta = run_leg(x, encoder_, false, "encoder", training);
  const int B = beta.dim(0);
  return batched
             ? reshape(beta, {B, profile_.bottleneck_c, profile_.bottleneck_w})
             : reshape(beta, {profile_.bottleneck_c, profile_.bottleneck_w});
}

Tensor RecNetModel::decode(const Tensor& beta, bool training) {
  bool batched = false;
  Tensor x = beta;
  if (beta.rank() == 2) {
    if (beta.dim(0) != profile_.bottleneck_c ||
        beta.dim(1) != profile_.bottleneck_w) {
      throw ShapeError("decode: bottleneck " + shape_string(beta.shape()) +
                       " does not match profile " + profile_.name + " (" +
                       std::to_string(profile_.bottleneck_c) + "x" +
                       std::to_string(profile_.bottleneck_w) + ")");
    }
    x = reshape(beta, {1, profile_.bottleneck_c, 1, profile_.bottleneck_w});
  } else if (beta.rank() == 3) {
    batched = true;
    if (beta.dim(1) != profile_.bottleneck_c ||
        beta.dim(2) != profile_.bottleneck_w) {
      throw ShapeError("decode: batched bottleneck " +
                       shape_string(beta.shape()) +
                       " does not match profile " + profile_.name);
    }
    x = reshape(beta, {beta.dim(0), profile_.bottleneck_c, 1,
                       profile_.bottleneck_w});
  } else {
    throw ShapeError("decode: need (c,w) or (B,c,w), have " +
                     shape_string(beta.shape()));
  }

  Tensor image = run_leg(x, decoder_, true, "decoder", training);
  if (!training) {
    // Inference clamps to the normalized range band; training losses must
    // see the raw regression values instead.
    for (float& v : image.data()) v = std::min(1.0f, std::max(0.0f, v));
  }
  return batched ? image
                 : reshape(image, {1, profile_.in_h, profile_.in_w});
}

Tensor RecNetModel::tail_similarity(const Tensor& beta1, const Tensor& beta2,
                                    bool training) {
  if (beta1.shape() != beta2.shape()) {
    throw ShapeError("tail: bottleneck shapes " +
                     shape_string(beta1.shape()) + " and " +
                     shape_string(beta2.shape()) + " differ");
  }
  bool batched = false;
  int B = 1;
  if (beta1.rank() == 2) {
    if (beta1.dim(0) != profile_.bottleneck_c ||
        beta1.dim(1) != profile_.bottleneck_w) {
      throw ShapeError("tail: bottleneck " + shape_string(beta1.shape()) +
                       " does not match profile " + profile_.name);
    }
  } else if (beta1.rank() == 3) {
    batched = true;
    B = beta1.dim(0);
    if (beta1.dim(1) != profile_.bottleneck_c ||
        beta1.dim(2) != profile_.bottleneck_w) {
      throw ShapeError("tail: batched bottleneck " +
                       shape_string(beta1.shape()) +
                       " does not match profile " + profile_.name);
    }
  } else {
    throw ShapeError("tail: need (c,w) or (B,c,w), have " +
                     shape_string(beta1.shape()));
  }

  Tensor delta = reshape(sub(beta1, beta2),
                         {B, 1, profile_.bottleneck_c, profile_.bottleneck_w});
  Tensor h = run_leg(delta, tail_, false, "tail", training);
  h = reshape(h, {B, profile_.tail_dense_in()});
  Tensor logit = dense(h, dense_weight_, dense_bias_);
  Tensor score = sigmoid(logit);
  return batched ? score : reshape(score, {1});
}

std::pair<Tensor, Tensor> RecNetModel::siamese_forward(const Tensor& i1,
                                                       const Tensor& i2,
                                                       bool training) {
  Tensor beta1 = encode(i1, training);
  Tensor beta2 = encode(i2, training);
  Tensor reconstruction = decode(beta1, training);
  Tensor score = tail_similarity(beta1, beta2, training);
  return {reconstruction, score};
}

std::vector<std::pair<std::string, Tensor>> RecNetModel::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  auto walk = [&out](std::vector<Block>& blocks, const std::string& leg,
                     const char* conv_kind) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      Block& b = blocks[i];
      const std::string n = std::to_string(i + 1);
      out.emplace_back(leg + "." + conv_kind + n + ".weight", b.weight);
      out.emplace_back(leg + "." + conv_kind + n + ".bias", b.bias);
      if (b.bn_gamma) {
        out.emplace_back(leg + ".bn" + n + ".gamma", *b.bn_gamma);
        out.emplace_back(leg + ".bn" + n + ".beta", *b.bn_beta);
      }
      if (b.slope) out.emplace_back(leg + ".prelu" + n + ".slope", *b.slope);
    }
  };
  walk(encoder_, "encoder", "conv");
  walk(decoder_, "decoder", "tconv");
  walk(tail_, "tail", "conv");
  out.emplace_back("tail.dense.weight", dense_weight_);
  out.emplace_back("tail.dense.bias", dense_bias_);
  return out;
}

std::vector<Tensor> RecNetModel::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<RecNetModel::StateView> RecNetModel::named_state() {
  std::vector<StateView> out;
  auto walk = [&out](std::vector<Block>& blocks, const std::string& leg) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      Block& b = blocks[i];
      if (!b.bn_state) continue;
      const std::string n = std::to_string(i + 1);
      out.push_back({leg + ".bn" + n + ".running_mean",
                     &b.bn_state->running_mean});
      out.push_back({leg + ".bn" + n + ".running_var",
                     &b.bn_state->running_var});
    }
  };
  walk(encoder_, "encoder");
  walk(decoder_, "decoder");
  walk(tail_, "tail");
  return out;
}

void RecNetModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");

  // The traversal is const in spirit; named_parameters/named_state only
  // hand out views.
  auto& self = const_cast<RecNetModel&>(*this);
  auto params = self.named_parameters();
  auto state = self.named_state();

  detail::write_magic(os, "RWTS");
  detail::write_le<std::uint16_t>(os, kWeightsVersion);
  detail::write_le<std::uint16_t>(os, profile_.id);
  detail::write_le<std::uint32_t>(
      os, static_cast<std::uint32_t>(params.size() + state.size()));

  auto write_entry = [&os](const std::string& name,
                           const std::vector<int>& shape, const float* data,
                           std::size_t n) {
    detail::write_le<std::uint16_t>(os,
                                    static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(os, name.data(), name.size());
    detail::write_le<std::uint8_t>(os,
                                   static_cast<std::uint8_t>(shape.size()));
    for (int d : shape)
      detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    detail::write_f32_array(os, data, n);
  };

  for (auto& [name, t] : params)
    write_entry(name, t.shape(), t.data().data(), t.data().size());
  for (auto& view : state) {
    write_entry(view.name,
                {static_cast<int>(view.values->size())},
                view.values->data(), view.values->size());
  }
  if (!os) throw IoError("failed writing weights to " + path);
}

RecNetModel RecNetModel::load(const std::string& path,
                              const std::string& expected_profile) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);

  detail::expect_magic(is, "RWTS", "weight file");
  const auto version = detail::read_le<std::uint16_t>(is, "weights version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported weight file version " +
                      std::to_string(version));
  }
  const auto file_id = detail::read_le<std::uint16_t>(is, "profile id");
  const std::string file_profile = profile_name_for_id(file_id);
  const ModelProfile& profile = ModelProfile::by_name(
      expected_profile.empty() ? file_profile : expected_profile);

  RecNetModel model(profile);

  struct Slot {
    std::vector<int> shape;
    float* data;
    std::size_t n;
    bool filled = false;
  };
  std::unordered_map<std::string, Slot> slots;
  std::vector<std::string> order;
  for (auto& [name, t] : model.named_parameters()) {
    slots[name] = {t.shape(), t.data().data(), t.data().size(), false};
    order.push_back(name);
  }
  for (auto& view : model.named_state()) {
    slots[view.name] = {{static_cast<int>(view.values->size())},
                        view.values->data(),
                        view.values->size(),
                        false};
    order.push_back(view.name);
  }

  const auto count = detail::read_le<std::uint32_t>(is, "tensor count");
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = detail::read_le<std::uint16_t>(is, "tensor name");
    std::string name(name_len, '\0');
    detail::get_bytes(is, name.data(), name_len, "tensor name");
    const auto rank = detail::read_le<std::uint8_t>(is, "tensor rank");
    if (rank > 8) {
      throw FormatError("tensor " + name + " has implausible rank " +
                        std::to_string(rank));
    }
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      const auto dim = detail::read_le<std::uint32_t>(is, "tensor dims");
      if (dim == 0 || dim > (1u << 24)) {
        throw FormatError("tensor " + name + " has implausible dimension " +
                          std::to_string(dim));
      }
      d = static_cast<int>(dim);
      n *= dim;
    }

    auto it = slots.find(name);
    if (it == slots.end()) {
      throw FormatError("weight file tensor \"" + name +
                        "\" does not exist in profile " + profile.name);
    }
    if (it->second.shape != shape) {
      throw ShapeError("tensor \"" + name + "\": file has " +
                       shape_string(shape) + ", profile " + profile.name +
                       " expects " + shape_string(it->second.shape));
    }
    detail::read_f32_array(is, it->second.data, n, name.c_str());
    it->second.filled = true;
  }

  for (const std::string& name : order) {
    if (!slots[name].filled) {
      throw FormatError("weight file is missing tensor \"" + name + "\"");
    }
  }
  return model;
}

}  // namespace recnet
