#include "recnet/ops.hpp"

#include <cmath>
#include <optional>
#include <string>

#include "recnet/errors.hpp"

namespace recnet {

namespace {

using Impl = std::shared_ptr<TensorImpl>;

// Double-precision view of a single-element tensor, preferring the shadow.
std::optional<double> scalar_value(const Impl& t) {
  if (t->numel() != 1) return std::nullopt;
  return t->shadow ? *t->shadow : static_cast<double>(t->data[0]);
}

// Gradient buffer of a tensor that participates in the backward pass,
// zero-initialized on first touch; nullptr when the tensor opted out.
float* grad_buf(const Impl& t) {
  if (!t->needs_grad()) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0f);
  return t->grad.data();
}

// Double-precision image of a tensor for probe-mode evaluation: the
// propagated dshadow when one exists, otherwise the (exact) widening of the
// stored float32 values.
std::vector<double> dview(const Impl& t) {
  if (!t->dshadow.empty()) return t->dshadow;
  return std::vector<double>(t->data.begin(), t->data.end());
}

// Assembles the result tensor and, when recording is on and any input
// tracks gradients, its autograd node.
Tensor finish(std::vector<int> shape, std::vector<float> data, const char* op,
              std::vector<Impl> inputs,
              std::function<void(const std::vector<float>&)> backward,
              std::optional<double> shadow = std::nullopt,
              std::vector<double> dshadow = {}) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->shadow = shadow;
  impl->dshadow = std::move(dshadow);

  bool track = false;
  if (grad_recording_enabled()) {
    for (const Impl& in : inputs)
      if (in->needs_grad()) track = true;
  }
  if (track) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(backward);
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                     " and " + shape_string(b.shape()) + " differ");
  }
}

// The heavy forward computations are written once over the element type so
// the float path and the probe-mode double path share one definition.

template <typename T>
void dense_kernel(const T* xd, const T* wd, const T* bd, T* out, int B,
                  int in, int out_f) {
  for (int b = 0; b < B; ++b) {
    for (int o = 0; o < out_f; ++o) {
      double acc = bd[o];
      const T* xrow = xd + static_cast<std::size_t>(b) * in;
      const T* wrow = wd + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += double(xrow[i]) * double(wrow[i]);
      out[static_cast<std::size_t>(b) * out_f + o] = static_cast<T>(acc);
    }
  }
}

template <typename T>
void conv2d_kernel(const T* xd, const T* wd, const T* bd, T* out, int B,
                   int Cin, int H, int W, int Cout, int kh, int kw, int sh,
                   int sw, int Ho, int Wo) {
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      T* plane = out + (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
      const T bv = bd[co];
      for (int i = 0; i < Ho * Wo; ++i) plane[i] = bv;
      for (int ci = 0; ci < Cin; ++ci) {
        const T* in_plane =
            xd + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
        const T* wk =
            wd + ((static_cast<std::size_t>(co) * Cin + ci) * kh) * kw;
        for (int r = 0; r < kh; ++r) {
          for (int c = 0; c < kw; ++c) {
            const T wv = wk[r * kw + c];
            for (int ho = 0; ho < Ho; ++ho) {
              const T* in_row = in_plane + (ho * sh + r) * W + c;
              T* out_row = plane + ho * Wo;
              for (int wo = 0; wo < Wo; ++wo)
                out_row[wo] += wv * in_row[wo * sw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_transpose2d_kernel(const T* xd, const T* wd, const T* bd, T* out,
                             int B, int Cin, int H, int W, int Cout, int kh,
                             int kw, int sh, int sw, int out_h, int out_w,
                             int base_h, int base_w) {
  for (int b = 0; b < B; ++b) {
    for (int co = 0; co < Cout; ++co) {
      // Bias covers the natural region only; appended rows/columns stay
      // exactly zero.
      T* plane =
          out + (static_cast<std::size_t>(b) * Cout + co) * out_h * out_w;
      const T bv = bd[co];
      for (int r = 0; r < base_h; ++r)
        for (int c = 0; c < base_w; ++c) plane[r * out_w + c] = bv;
    }
    for (int ci = 0; ci < Cin; ++ci) {
      const T* in_plane = xd + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
      for (int co = 0; co < Cout; ++co) {
        T* plane =
            out + (static_cast<std::size_t>(b) * Cout + co) * out_h * out_w;
        const T* wk =
            wd + ((static_cast<std::size_t>(ci) * Cout + co) * kh) * kw;
        for (int r = 0; r < kh; ++r) {
          for (int c = 0; c < kw; ++c) {
            const T wval = wk[r * kw + c];
            for (int hi = 0; hi < H; ++hi) {
              const T* in_row = in_plane + hi * W;
              T* out_row = plane + (hi * sh + r) * out_w + c;
              for (int wi = 0; wi < W; ++wi)
                out_row[wi * sw] += wval * in_row[wi];
            }
          }
        }
      }
    }
  }
}

// Normalization applied with externally supplied per-channel statistics;
// optionally records the normalized values for the backward pass.
template <typename T>
void batchnorm_apply_kernel(const T* xd, const T* gd, const T* bd,
                            const double* mean, const double* istd, T* out,
                            T* xhat_or_null, int B, int C, std::size_t plane) {
  for (int c = 0; c < C; ++c) {
    const double m = mean[c], is = istd[c];
    const T gs = gd[c], bs = bd[c];
    for (int b = 0; b < B; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xh = static_cast<T>((xd[off + i] - m) * is);
        if (xhat_or_null) xhat_or_null[off + i] = xh;
        out[off + i] = gs * xh + bs;
      }
    }
  }
}

// Per-channel mean and biased variance over batch and spatial extent,
// accumulated in double regardless of the element type.
template <typename T>
void batch_stats(const T* xd, int B, int C, std::size_t plane, double* mean,
                 double* var) {
  const double n = static_cast<double>(static_cast<std::size_t>(B) * plane);
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int b = 0; b < B; ++b) {
      const T* p = xd + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    }
    const double m = acc / n;
    double var_acc = 0.0;
    for (int b = 0; b < B; ++b) {
      const T* p = xd + (static_cast<std::size_t>(b) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - m;
        var_acc += d * d;
      }
    }
    mean[c] = m;
    var[c] = var_acc / n;
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl()))
    if (auto vb = scalar_value(b.impl())) shadow = *va + *vb;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl()), db = dview(b.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i) dsh[i] = da[i] + db[i];
  }

  Impl ai = a.impl(), bi = b.impl();
  return finish(
      a.shape(), std::move(out), "add", {ai, bi},
      [ai, bi](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (float* gb = grad_buf(bi))
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      },
      shadow, std::move(dsh));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl()))
    if (auto vb = scalar_value(b.impl())) shadow = *va - *vb;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl()), db = dview(b.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i) dsh[i] = da[i] - db[i];
  }

  Impl ai = a.impl(), bi = b.impl();
  return finish(
      a.shape(), std::move(out), "sub", {ai, bi},
      [ai, bi](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        if (float* gb = grad_buf(bi))
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      },
      shadow, std::move(dsh));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl()))
    if (auto vb = scalar_value(b.impl())) shadow = *va * *vb;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl()), db = dview(b.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i) dsh[i] = da[i] * db[i];
  }

  // Operand values are captured by copy: the backward formula needs the
  // forward-time values even if a buffer is later mutated in place.
  Impl ai = a.impl(), bi = b.impl();
  std::vector<float> av = a.data(), bv = b.data();
  return finish(
      a.shape(), std::move(out), "mul", {ai, bi},
      [ai, bi, av = std::move(av), bv = std::move(bv)](
          const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        if (float* gb = grad_buf(bi))
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      },
      shadow, std::move(dsh));
}

Tensor scale(const Tensor& a, double s) {
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>(s * a.data()[i]);

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl())) shadow = s * *va;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i) dsh[i] = s * da[i];
  }

  Impl ai = a.impl();
  return finish(
      a.shape(), std::move(out), "scale", {ai},
      [ai, s](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += static_cast<float>(s * g[i]);
      },
      shadow, std::move(dsh));
}

Tensor abs(const Tensor& a) {
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(a.data()[i]);

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl())) shadow = std::fabs(*va);

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i) dsh[i] = std::fabs(da[i]);
  }

  Impl ai = a.impl();
  std::vector<float> av = a.data();
  return finish(
      a.shape(), std::move(out), "abs", {ai},
      [ai, av = std::move(av)](const std::vector<float>& g) {
        // Subgradient 0 at the kink.
        if (float* ga = grad_buf(ai)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] > 0.0f)
              ga[i] += g[i];
            else if (av[i] < 0.0f)
              ga[i] -= g[i];
          }
        }
      },
      shadow, std::move(dsh));
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    double dacc = 0.0;
    for (double v : dview(a.impl())) dacc += v;
    dsh = {dacc};
  }

  Impl ai = a.impl();
  return finish(
      {1}, {static_cast<float>(acc)}, "sum", {ai},
      [ai](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai)) {
          const float gv = g[0];
          for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += gv;
        }
      },
      acc, std::move(dsh));
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(a.numel());
  acc *= inv_n;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    double dacc = 0.0;
    for (double v : dview(a.impl())) dacc += v;
    dsh = {dacc * inv_n};
  }

  Impl ai = a.impl();
  return finish(
      {1}, {static_cast<float>(acc)}, "mean", {ai},
      [ai, inv_n](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai)) {
          const float gv = static_cast<float>(g[0] * inv_n);
          for (std::size_t i = 0; i < ai->data.size(); ++i) ga[i] += gv;
        }
      },
      acc, std::move(dsh));
}

Tensor reshape(const Tensor& a, const std::vector<int>& new_shape) {
  std::int64_t n = 1;
  for (int d : new_shape) n *= d;
  if (n != a.numel()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) +
                     " cannot become " + shape_string(new_shape));
  }

  std::vector<double> dsh;
  if (probe_mode_enabled()) dsh = dview(a.impl());

  Impl ai = a.impl();
  return finish(
      new_shape, a.data(), "reshape", {ai},
      [ai](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      },
      scalar_value(a.impl()), std::move(dsh));
}

Tensor sigmoid(const Tensor& a) {
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-double(a.data()[i]))));

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl()))
    shadow = 1.0 / (1.0 + std::exp(-*va));

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl());
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      dsh[i] = 1.0 / (1.0 + std::exp(-da[i]));
  }

  Impl ai = a.impl();
  std::vector<float> yv = out;
  return finish(
      a.shape(), std::move(out), "sigmoid", {ai},
      [ai, yv = std::move(yv)](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai))
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * yv[i] * (1.0f - yv[i]);
      },
      shadow, std::move(dsh));
}

Tensor prelu(const Tensor& a, const Tensor& slope) {
  if (slope.numel() != 1) {
    throw ShapeError("prelu: slope must hold a single element, have " +
                     shape_string(slope.shape()));
  }
  const float s = slope.data()[0];
  const std::size_t n = a.data().size();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float x = a.data()[i];
    out[i] = x >= 0.0f ? x : s * x;
  }

  std::optional<double> shadow;
  if (auto va = scalar_value(a.impl()))
    shadow = *va >= 0.0 ? *va : double(s) * *va;

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto da = dview(a.impl());
    const double ds = dview(slope.impl())[0];
    dsh.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      dsh[i] = da[i] >= 0.0 ? da[i] : ds * da[i];
  }

  Impl ai = a.impl(), si = slope.impl();
  std::vector<float> av = a.data();
  return finish(
      a.shape(), std::move(out), "prelu", {ai, si},
      [ai, si, s, av = std::move(av)](const std::vector<float>& g) {
        if (float* ga = grad_buf(ai)) {
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * (av[i] >= 0.0f ? 1.0f : s);
        }
        if (float* gs = grad_buf(si)) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i)
            if (av[i] < 0.0f) acc += double(g[i]) * av[i];
          gs[0] += static_cast<float>(acc);
        }
      },
      shadow, std::move(dsh));
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("dense: need input (B,In), weight (Out,In), bias (Out); "
                     "have " +
                     shape_string(x.shape()) + ", " +
                     shape_string(weight.shape()) + ", " +
                     shape_string(bias.shape()));
  }
  const int B = x.dim(0), in = x.dim(1);
  const int out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_f) {
    throw ShapeError("dense: input length " + std::to_string(in) +
                     " vs weight " + shape_string(weight.shape()) +
                     ", bias " + shape_string(bias.shape()));
  }

  std::vector<float> out(static_cast<std::size_t>(B) * out_f);
  std::optional<double> shadow;
  {
    const float* xd = x.data().data();
    const float* wd = weight.data().data();
    const float* bd = bias.data().data();
    dense_kernel(xd, wd, bd, out.data(), B, in, out_f);
    if (B == 1 && out_f == 1) {
      double acc = bd[0];
      for (int i = 0; i < in; ++i) acc += double(xd[i]) * wd[i];
      shadow = acc;
    }
  }

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto dx = dview(x.impl());
    const auto dw = dview(weight.impl());
    const auto db_ = dview(bias.impl());
    dsh.resize(out.size());
    dense_kernel(dx.data(), dw.data(), db_.data(), dsh.data(), B, in, out_f);
  }

  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<float> xv = x.data(), wv = weight.data();
  return finish(
      {B, out_f}, std::move(out), "dense", {xi, wi, bi},
      [xi, wi, bi, B, in, out_f, xv = std::move(xv), wv = std::move(wv)](
          const std::vector<float>& g) {
        if (float* gx = grad_buf(xi)) {
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < out_f; ++o) {
              const float gv = g[static_cast<std::size_t>(b) * out_f + o];
              const float* wrow = wv.data() + static_cast<std::size_t>(o) * in;
              float* gxrow = gx + static_cast<std::size_t>(b) * in;
              for (int i = 0; i < in; ++i) gxrow[i] += gv * wrow[i];
            }
        }
        if (float* gw = grad_buf(wi)) {
          for (int b = 0; b < B; ++b)
            for (int o = 0; o < out_f; ++o) {
              const float gv = g[static_cast<std::size_t>(b) * out_f + o];
              const float* xrow = xv.data() + static_cast<std::size_t>(b) * in;
              float* gwrow = gw + static_cast<std::size_t>(o) * in;
              for (int i = 0; i < in; ++i) gwrow[i] += gv * xrow[i];
            }
        }
        if (float* gb = grad_buf(bi)) {
          for (int o = 0; o < out_f; ++o) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b)
              acc += g[static_cast<std::size_t>(b) * out_f + o];
            gb[o] += static_cast<float>(acc);
          }
        }
      },
      shadow, std::move(dsh));
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              int stride_h, int stride_w) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError(
        "conv2d: need input (B,Cin,H,W), weight (Cout,Cin,kh,kw), bias "
        "(Cout); have " +
        shape_string(x.shape()) + ", " + shape_string(weight.shape()) +
        ", " + shape_string(bias.shape()));
  }
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != Cin || bias.dim(0) != Cout) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) +
                     " / bias " + shape_string(bias.shape()) +
                     " incompatible with input " + shape_string(x.shape()));
  }
  if (stride_h < 1 || stride_w < 1) {
    throw ShapeError("conv2d: strides must be at least 1, got (" +
                     std::to_string(stride_h) + "," +
                     std::to_string(stride_w) + ")");
  }
  if (kh > H || kw > W) {
    throw ShapeError("conv2d: kernel (" + std::to_string(kh) + "," +
                     std::to_string(kw) + ") exceeds input plane " +
                     std::to_string(H) + "x" + std::to_string(W));
  }
  const int Ho = (H - kh) / stride_h + 1;
  const int Wo = (W - kw) / stride_w + 1;

  std::vector<float> out(static_cast<std::size_t>(B) * Cout * Ho * Wo);
  conv2d_kernel(x.data().data(), weight.data().data(), bias.data().data(),
                out.data(), B, Cin, H, W, Cout, kh, kw, stride_h, stride_w, Ho,
                Wo);

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto dx = dview(x.impl());
    const auto dw = dview(weight.impl());
    const auto db_ = dview(bias.impl());
    dsh.resize(out.size());
    conv2d_kernel(dx.data(), dw.data(), db_.data(), dsh.data(), B, Cin, H, W,
                  Cout, kh, kw, stride_h, stride_w, Ho, Wo);
  }

  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<float> xv = x.data(), wv = weight.data();
  const int sh = stride_h, sw = stride_w;
  return finish(
      {B, Cout, Ho, Wo}, std::move(out), "conv2d", {xi, wi, bi},
      [=, xv = std::move(xv), wv = std::move(wv)](
          const std::vector<float>& g) {
        if (float* gx = grad_buf(xi)) {
          for (int b = 0; b < B; ++b)
            for (int co = 0; co < Cout; ++co) {
              const float* gplane =
                  g.data() +
                  (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
              for (int ci = 0; ci < Cin; ++ci) {
                float* gx_plane =
                    gx + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
                const float* wk =
                    wv.data() +
                    ((static_cast<std::size_t>(co) * Cin + ci) * kh) * kw;
                for (int r = 0; r < kh; ++r)
                  for (int c = 0; c < kw; ++c) {
                    const float wval = wk[r * kw + c];
                    for (int ho = 0; ho < Ho; ++ho) {
                      float* gx_row = gx_plane + (ho * sh + r) * W + c;
                      const float* g_row = gplane + ho * Wo;
                      for (int wo = 0; wo < Wo; ++wo)
                        gx_row[wo * sw] += wval * g_row[wo];
                    }
                  }
              }
            }
        }
        if (float* gw = grad_buf(wi)) {
          for (int b = 0; b < B; ++b)
            for (int co = 0; co < Cout; ++co) {
              const float* gplane =
                  g.data() +
                  (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
              for (int ci = 0; ci < Cin; ++ci) {
                const float* in_plane =
                    xv.data() +
                    (static_cast<std::size_t>(b) * Cin + ci) * H * W;
                float* gwk =
                    gw + ((static_cast<std::size_t>(co) * Cin + ci) * kh) * kw;
                for (int r = 0; r < kh; ++r)
                  for (int c = 0; c < kw; ++c) {
                    float acc = 0.0f;
                    for (int ho = 0; ho < Ho; ++ho) {
                      const float* in_row =
                          in_plane + (ho * sh + r) * W + c;
                      const float* g_row = gplane + ho * Wo;
                      for (int wo = 0; wo < Wo; ++wo)
                        acc += g_row[wo] * in_row[wo * sw];
                    }
                    gwk[r * kw + c] += acc;
                  }
              }
            }
        }
        if (float* gb = grad_buf(bi)) {
          for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
              const float* gplane =
                  g.data() +
                  (static_cast<std::size_t>(b) * Cout + co) * Ho * Wo;
              for (int i = 0; i < Ho * Wo; ++i) acc += gplane[i];
            }
            gb[co] += static_cast<float>(acc);
          }
        }
      },
      std::nullopt, std::move(dsh));
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const Tensor& bias, int stride_h, int stride_w,
                        int out_h, int out_w) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError(
        "conv_transpose2d: need input (B,Cin,H,W), weight (Cin,Cout,kh,kw), "
        "bias (Cout); have " +
        shape_string(x.shape()) + ", " + shape_string(weight.shape()) +
        ", " + shape_string(bias.shape()));
  }
  const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != Cin || bias.dim(0) != Cout) {
    throw ShapeError("conv_transpose2d: weight " +
                     shape_string(weight.shape()) + " / bias " +
                     shape_string(bias.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (stride_h < 1 || stride_w < 1) {
    throw ShapeError("conv_transpose2d: strides must be at least 1, got (" +
                     std::to_string(stride_h) + "," +
                     std::to_string(stride_w) + ")");
  }
  const int base_h = (H - 1) * stride_h + kh;
  const int base_w = (W - 1) * stride_w + kw;
  if (out_h < base_h || out_w < base_w) {
    throw ShapeError("conv_transpose2d: target " + std::to_string(out_h) +
                     "x" + std::to_string(out_w) +
                     " is smaller than the natural output " +
                     std::to_string(base_h) + "x" + std::to_string(base_w));
  }

  std::vector<float> out(static_cast<std::size_t>(B) * Cout * out_h * out_w,
                         0.0f);
  conv_transpose2d_kernel(x.data().data(), weight.data().data(),
                          bias.data().data(), out.data(), B, Cin, H, W, Cout,
                          kh, kw, stride_h, stride_w, out_h, out_w, base_h,
                          base_w);

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto dx = dview(x.impl());
    const auto dw = dview(weight.impl());
    const auto db_ = dview(bias.impl());
    dsh.assign(out.size(), 0.0);
    conv_transpose2d_kernel(dx.data(), dw.data(), db_.data(), dsh.data(), B,
                            Cin, H, W, Cout, kh, kw, stride_h, stride_w, out_h,
                            out_w, base_h, base_w);
  }

  Impl xi = x.impl(), wi = weight.impl(), bi = bias.impl();
  std::vector<float> xv = x.data(), wv = weight.data();
  const int sh = stride_h, sw = stride_w;
  return finish(
      {B, Cout, out_h, out_w}, std::move(out), "conv_transpose2d",
      {xi, wi, bi},
      [=, xv = std::move(xv), wv = std::move(wv)](
          const std::vector<float>& g) {
        if (float* gx = grad_buf(xi)) {
          for (int b = 0; b < B; ++b)
            for (int ci = 0; ci < Cin; ++ci) {
              float* gx_plane =
                  gx + (static_cast<std::size_t>(b) * Cin + ci) * H * W;
              for (int co = 0; co < Cout; ++co) {
                const float* gplane =
                    g.data() +
                    (static_cast<std::size_t>(b) * Cout + co) * out_h * out_w;
                const float* wk =
                    wv.data() +
                    ((static_cast<std::size_t>(ci) * Cout + co) * kh) * kw;
                for (int r = 0; r < kh; ++r)
                  for (int c = 0; c < kw; ++c) {
                    const float wval = wk[r * kw + c];
                    for (int hi = 0; hi < H; ++hi) {
                      const float* g_row =
                          gplane + (hi * sh + r) * out_w + c;
                      float* gx_row = gx_plane + hi * W;
                      for (int wi = 0; wi < W; ++wi)
                        gx_row[wi] += wval * g_row[wi * sw];
                    }
                  }
              }
            }
        }
        if (float* gw = grad_buf(wi)) {
          for (int b = 0; b < B; ++b)
            for (int ci = 0; ci < Cin; ++ci) {
              const float* in_plane =
                  xv.data() +
                  (static_cast<std::size_t>(b) * Cin + ci) * H * W;
              for (int co = 0; co < Cout; ++co) {
                const float* gplane =
                    g.data() +
                    (static_cast<std::size_t>(b) * Cout + co) * out_h * out_w;
                float* gwk =
                    gw + ((static_cast<std::size_t>(ci) * Cout + co) * kh) * kw;
                for (int r = 0; r < kh; ++r)
                  for (int c = 0; c < kw; ++c) {
                    float acc = 0.0f;
                    for (int hi = 0; hi < H; ++hi) {
                      const float* g_row =
                          gplane + (hi * sh + r) * out_w + c;
                      const float* in_row = in_plane + hi * W;
                      for (int wi = 0; wi < W; ++wi)
                        acc += g_row[wi * sw] * in_row[wi];
                    }
                    gwk[r * kw + c] += acc;
                  }
              }
            }
        }
        if (float* gb = grad_buf(bi)) {
          for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
              const float* gplane =
                  g.data() +
                  (static_cast<std::size_t>(b) * Cout + co) * out_h * out_w;
              for (int r = 0; r < base_h; ++r)
                for (int c = 0; c < base_w; ++c)
                  acc += gplane[r * out_w + c];
            }
            gb[co] += static_cast<float>(acc);
          }
        }
      },
      std::nullopt, std::move(dsh));
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training, double momentum,
                   double eps) {
  if (x.rank() != 4) {
    throw ShapeError("batchnorm2d: need input (B,C,H,W), have " +
                     shape_string(x.shape()));
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != C ||
      beta.dim(0) != C || state.channels() != C) {
    throw ShapeError("batchnorm2d: channel count " + std::to_string(C) +
                     " vs gamma " + shape_string(gamma.shape()) + ", beta " +
                     shape_string(beta.shape()) + ", running stats " +
                     std::to_string(state.channels()));
  }
  if (B < 1 || H < 1 || W < 1) {
    throw ShapeError("batchnorm2d: zero-size extent in " +
                     shape_string(x.shape()));
  }

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t n_per_c = static_cast<std::size_t>(B) * plane;
  const float* xd = x.data().data();
  const float* gd = gamma.data().data();
  const float* bd = beta.data().data();

  std::vector<float> out(x.data().size());
  std::vector<float> xhat(x.data().size());
  std::vector<double> mean_c(C), var_c(C), inv_std(C);

  if (training) {
    batch_stats(xd, B, C, plane, mean_c.data(), var_c.data());
    const double n = static_cast<double>(n_per_c);
    for (int c = 0; c < C; ++c) {
      const double unbiased =
          n_per_c > 1 ? var_c[c] * n / static_cast<double>(n_per_c - 1)
                      : var_c[c];
      state.running_mean[c] = static_cast<float>(
          (1.0 - momentum) * state.running_mean[c] + momentum * mean_c[c]);
      state.running_var[c] = static_cast<float>(
          (1.0 - momentum) * state.running_var[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean_c[c] = state.running_mean[c];
      var_c[c] = state.running_var[c];
    }
  }
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(var_c[c] + eps);
  batchnorm_apply_kernel(xd, gd, bd, mean_c.data(), inv_std.data(), out.data(),
                         xhat.data(), B, C, plane);

  std::vector<double> dsh;
  if (probe_mode_enabled()) {
    const auto dx = dview(x.impl());
    const auto dg = dview(gamma.impl());
    const auto db_ = dview(beta.impl());
    std::vector<double> pm(C), pv(C), pistd(C);
    if (training) {
      batch_stats(dx.data(), B, C, plane, pm.data(), pv.data());
    } else {
      for (int c = 0; c < C; ++c) {
        pm[c] = state.running_mean[c];
        pv[c] = state.running_var[c];
      }
    }
    for (int c = 0; c < C; ++c) pistd[c] = 1.0 / std::sqrt(pv[c] + eps);
    dsh.resize(dx.size());
    batchnorm_apply_kernel(dx.data(), dg.data(), db_.data(), pm.data(),
                           pistd.data(), dsh.data(),
                           static_cast<double*>(nullptr), B, C, plane);
  }

  Impl xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  std::vector<float> gamma_v = gamma.data();
  return finish(
      x.shape(), std::move(out), "batchnorm2d", {xi, gi, bi},
      [xi, gi, bi, B, C, plane, n_per_c, training,
       xhat = std::move(xhat), inv_std = std::move(inv_std),
       gamma_v = std::move(gamma_v)](const std::vector<float>& g) {
        for (int c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (int b = 0; b < B; ++b) {
            const std::size_t off =
                (static_cast<std::size_t>(b) * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g += g[off + i];
              sum_gx += double(g[off + i]) * xhat[off + i];
            }
          }
          if (float* gb = grad_buf(bi)) gb[c] += static_cast<float>(sum_g);
          if (float* gg = grad_buf(gi)) gg[c] += static_cast<float>(sum_gx);
          if (float* gx = grad_buf(xi)) {
            const double k = gamma_v[c] * inv_std[c];
            if (training) {
              const double mean_g = sum_g / static_cast<double>(n_per_c);
              const double mean_gx = sum_gx / static_cast<double>(n_per_c);
              for (int b = 0; b < B; ++b) {
                const std::size_t off =
                    (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  gx[off + i] += static_cast<float>(
                      k * (g[off + i] - mean_g - xhat[off + i] * mean_gx));
                }
              }
            } else {
              // Running statistics are constants: plain affine map.
              for (int b = 0; b < B; ++b) {
                const std::size_t off =
                    (static_cast<std::size_t>(b) * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                  gx[off + i] += static_cast<float>(k * g[off + i]);
              }
            }
          }
        }
      },
      std::nullopt, std::move(dsh));
}

std::pair<Tensor, Tensor> image_gradients(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("image_gradients: need (B,C,H,W), have " +
                     shape_string(x.shape()));
  }
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) {
    throw ShapeError("image_gradients: spatial extent " + std::to_string(H) +
                     "x" + std::to_string(W) + " must be at least 2x2");
  }

  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t planes = static_cast<std::size_t>(B) * C;
  const float* xd = x.data().data();

  std::vector<float> du(x.data().size(), 0.0f);
  std::vector<float> dv(x.data().size(), 0.0f);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* in = xd + p * plane;
    float* du_p = du.data() + p * plane;
    float* dv_p = dv.data() + p * plane;
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c + 1 < W; ++c)
        du_p[r * W + c] = in[r * W + c + 1] - in[r * W + c];
      if (r + 1 < H) {
        for (int c = 0; c < W; ++c)
          dv_p[r * W + c] = in[(r + 1) * W + c] - in[r * W + c];
      }
    }
  }

  std::vector<double> du_dsh, dv_dsh;
  if (probe_mode_enabled()) {
    const auto dx = dview(x.impl());
    du_dsh.assign(dx.size(), 0.0);
    dv_dsh.assign(dx.size(), 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
      const double* in = dx.data() + p * plane;
      double* du_p = du_dsh.data() + p * plane;
      double* dv_p = dv_dsh.data() + p * plane;
      for (int r = 0; r < H; ++r) {
        for (int c = 0; c + 1 < W; ++c)
          du_p[r * W + c] = in[r * W + c + 1] - in[r * W + c];
        if (r + 1 < H) {
          for (int c = 0; c < W; ++c)
            dv_p[r * W + c] = in[(r + 1) * W + c] - in[r * W + c];
        }
      }
    }
  }

  Impl xi = x.impl();
  Tensor du_t = finish(
      x.shape(), std::move(du), "image_gradients_u", {xi},
      [xi, planes, plane, H, W](const std::vector<float>& g) {
        if (float* gx = grad_buf(xi)) {
          for (std::size_t p = 0; p < planes; ++p) {
            const float* gp = g.data() + p * plane;
            float* gxp = gx + p * plane;
            for (int r = 0; r < H; ++r)
              for (int c = 0; c + 1 < W; ++c) {
                const float gv = gp[r * W + c];
                gxp[r * W + c + 1] += gv;
                gxp[r * W + c] -= gv;
              }
          }
        }
      },
      std::nullopt, std::move(du_dsh));
  Tensor dv_t = finish(
      x.shape(), std::move(dv), "image_gradients_v", {xi},
      [xi, planes, plane, H, W](const std::vector<float>& g) {
        if (float* gx = grad_buf(xi)) {
          for (std::size_t p = 0; p < planes; ++p) {
            const float* gp = g.data() + p * plane;
            float* gxp = gx + p * plane;
            for (int r = 0; r + 1 < H; ++r)
              for (int c = 0; c < W; ++c) {
                const float gv = gp[r * W + c];
                gxp[(r + 1) * W + c] += gv;
                gxp[r * W + c] -= gv;
              }
          }
        }
      },
      std::nullopt, std::move(dv_dsh));
  return {du_t, dv_t};
}

}  // namespace recnet
