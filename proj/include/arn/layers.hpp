#pragma once

// Differentiable building blocks with explicit forward/backward passes.
// Every layer caches what its backward pass needs during the most recent
// forward call, so a forward must precede each backward.

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "arn/core.hpp"
#include "arn/tensor.hpp"

namespace arn {

enum class Mode { Train, Infer };

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat velocity;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
    velocity = Mat::Zero(value.rows(), value.cols());
  }
  [[nodiscard]] Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(std::vector<Param*>& /*out*/) {}
  [[nodiscard]] virtual Shape3 output_shape(Shape3 in) const = 0;
};

// ---------------------------------------------------------------------------
// Patch geometry shared by convolution and transposed convolution
// ---------------------------------------------------------------------------

/// Maps each (output position, kernel tap) of a convolution onto an input
/// position. A transposed convolution uses the same geometry with the roles
/// of its input and output swapped.
struct PatchGeometry {
  int in_h = 0, in_w = 0;
  int out_h = 0, out_w = 0;
  int kh = 1, kw = 1;
  int stride = 1;
  int pad = 0;

  static PatchGeometry for_conv(int in_h, int in_w, int kh, int kw, int stride, int pad) {
    PatchGeometry g{in_h, in_w, 0, 0, kh, kw, stride, pad};
    g.out_h = (in_h + 2 * pad - kh) / stride + 1;
    g.out_w = (in_w + 2 * pad - kw) / stride + 1;
    return g;
  }

  /// Gathers patches: (n*out_h*out_w) x (kh*kw*c).
  [[nodiscard]] Mat im2col(const Tensor& x) const {
    const int c = x.shape.c;
    Mat cols = Mat::Zero(static_cast<Eigen::Index>(x.n) * out_h * out_w, static_cast<Eigen::Index>(kh) * kw * c);
    for (int b = 0; b < x.n; ++b)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const Eigen::Index row = (static_cast<Eigen::Index>(b) * out_h + oy) * out_w + ox;
          double* dst = cols.row(row).data();
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= in_w) continue;
              const Eigen::Index src = (static_cast<Eigen::Index>(b) * in_h + iy) * in_w + ix;
              std::memcpy(dst + (static_cast<std::size_t>(ky) * kw + kx) * c, x.data.row(src).data(),
                          sizeof(double) * static_cast<std::size_t>(c));
            }
          }
        }
    return cols;
  }

  /// Scatter-adds patches back onto an (n, in_h, in_w, c) grid.
  [[nodiscard]] Tensor col2im(const Mat& cols, int n, int c) const {
    Tensor x(n, Shape3{in_h, in_w, c});
    for (int b = 0; b < n; ++b)
      for (int oy = 0; oy < out_h; ++oy)
        for (int ox = 0; ox < out_w; ++ox) {
          const Eigen::Index row = (static_cast<Eigen::Index>(b) * out_h + oy) * out_w + ox;
          const double* src = cols.row(row).data();
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= in_w) continue;
              double* dst = x.data.row((static_cast<Eigen::Index>(b) * in_h + iy) * in_w + ix).data();
              const double* s = src + (static_cast<std::size_t>(ky) * kw + kx) * c;
              for (int ch = 0; ch < c; ++ch) dst[ch] += s[ch];
            }
          }
        }
    return x;
  }
};

inline Mat init_weights(Eigen::Index rows, Eigen::Index cols, double fan_in, double gain, Rng& rng) {
  Mat w(rows, cols);
  const double std = std::sqrt(gain / fan_in);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal() * std;
  return w;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

class Conv2d final : public Layer {
 public:
  /// `gain` 2 suits layers followed by a rectifier, 1 suits linear outputs.
  Conv2d(std::string name, int in_c, int out_c, int kh, int kw, int stride, int pad, double gain, Rng& rng)
      : in_c_(in_c), out_c_(out_c), kh_(kh), kw_(kw), stride_(stride), pad_(pad),
        weight_(name + ".weight", init_weights(static_cast<Eigen::Index>(kh) * kw * in_c, out_c,
                                               static_cast<double>(kh) * kw * in_c, gain, rng)),
        bias_(name + ".bias", Mat::Zero(1, out_c)) {}

  Tensor forward(const Tensor& x, Mode) override {
    if (x.shape.c != in_c_) throw ConfigError("conv input channels " + std::to_string(x.shape.c) + " != " + std::to_string(in_c_));
    geom_ = PatchGeometry::for_conv(x.shape.h, x.shape.w, kh_, kw_, stride_, pad_);
    n_ = x.n;
    cols_ = geom_.im2col(x);
    Tensor y(x.n, Shape3{geom_.out_h, geom_.out_w, out_c_});
    y.data.noalias() = cols_ * weight_.value;
    y.data.rowwise() += bias_.value.row(0);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    weight_.grad.noalias() += cols_.transpose() * g.data;
    bias_.grad.row(0) += g.data.colwise().sum();
    const Mat dcols = g.data * weight_.value.transpose();
    return geom_.col2im(dcols, n_, in_c_);
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  [[nodiscard]] Shape3 output_shape(Shape3 in) const override {
    const auto g = PatchGeometry::for_conv(in.h, in.w, kh_, kw_, stride_, pad_);
    return {g.out_h, g.out_w, out_c_};
  }

 private:
  int in_c_, out_c_, kh_, kw_, stride_, pad_;
  Param weight_, bias_;
  PatchGeometry geom_{};
  Mat cols_;
  int n_ = 0;
};

/// Transposed convolution without padding: out = (in - 1) * stride + kernel.
class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(std::string name, int in_c, int out_c, int kh, int kw, int stride, double gain, Rng& rng)
      : in_c_(in_c), out_c_(out_c), kh_(kh), kw_(kw), stride_(stride),
        weight_(name + ".weight", init_weights(in_c, static_cast<Eigen::Index>(kh) * kw * out_c,
                                               static_cast<double>(in_c) * kh * kw / (stride * stride), gain, rng)),
        bias_(name + ".bias", Mat::Zero(1, out_c)) {}

  Tensor forward(const Tensor& x, Mode) override {
    if (x.shape.c != in_c_) throw ConfigError("deconv input channels mismatch");
    const Shape3 os = output_shape(x.shape);
    // Conv geometry from the (large) output grid down to the (small) input grid.
    geom_ = PatchGeometry{os.h, os.w, x.shape.h, x.shape.w, kh_, kw_, stride_, 0};
    input_ = x;
    const Mat cols = x.data * weight_.value;
    Tensor y = geom_.col2im(cols, x.n, out_c_);
    y.data.rowwise() += bias_.value.row(0);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    bias_.grad.row(0) += g.data.colwise().sum();
    const Mat dcols = geom_.im2col(g);
    weight_.grad.noalias() += input_.data.transpose() * dcols;
    Tensor dx(input_.n, input_.shape);
    dx.data.noalias() = dcols * weight_.value.transpose();
    return dx;
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  [[nodiscard]] Shape3 output_shape(Shape3 in) const override {
    return {(in.h - 1) * stride_ + kh_, (in.w - 1) * stride_ + kw_, out_c_};
  }

 private:
  int in_c_, out_c_, kh_, kw_, stride_;
  Param weight_, bias_;
  PatchGeometry geom_{};
  Tensor input_;
};

/// Fully connected layer on 1x1 tensors (n x in matrices).
class Dense final : public Layer {
 public:
  Dense(std::string name, int in, int out, double gain, Rng& rng)
      : in_(in), out_(out), weight_(name + ".weight", init_weights(in, out, in, gain, rng)),
        bias_(name + ".bias", Mat::Zero(1, out)) {}

  Tensor forward(const Tensor& x, Mode) override {
    if (x.shape != Shape3{1, 1, in_}) throw ConfigError("dense input width mismatch");
    input_ = x.data;
    Tensor y(x.n, Shape3{1, 1, out_});
    y.data.noalias() = x.data * weight_.value;
    y.data.rowwise() += bias_.value.row(0);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    weight_.grad.noalias() += input_.transpose() * g.data;
    bias_.grad.row(0) += g.data.colwise().sum();
    return Tensor::from_matrix(g.data * weight_.value.transpose());
  }

  void collect(std::vector<Param*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  [[nodiscard]] Shape3 output_shape(Shape3) const override { return {1, 1, out_}; }

 private:
  int in_, out_;
  Param weight_, bias_;
  Mat input_;
};

// ---------------------------------------------------------------------------
// Elementwise layers
// ---------------------------------------------------------------------------

/// ELU is the default: continuously differentiable, so finite-difference
/// checks hold everywhere. ReLU and tanh are selectable.
enum class Activation { Elu, Relu, Tanh };

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(Activation kind) : kind_(kind) {}

  Tensor forward(const Tensor& x, Mode) override {
    input_ = x.data;
    Tensor y(x.n, x.shape);
    switch (kind_) {
      case Activation::Elu: y.data = x.data.unaryExpr([](double v) { return v > 0 ? v : std::expm1(v); }); break;
      case Activation::Relu: y.data = x.data.cwiseMax(0.0); break;
      case Activation::Tanh: y.data = x.data.array().tanh().matrix(); break;
    }
    output_ = y.data;
    return y;
  }

  Tensor backward(const Tensor& g) override {
    Tensor dx(g.n, g.shape);
    switch (kind_) {
      case Activation::Elu:
        dx.data = g.data.array() * (input_.array() > 0).select(1.0, output_.array() + 1.0);
        break;
      case Activation::Relu: dx.data = g.data.array() * (input_.array() > 0).cast<double>(); break;
      case Activation::Tanh: dx.data = g.data.array() * (1.0 - output_.array().square()); break;
    }
    return dx;
  }

  [[nodiscard]] Shape3 output_shape(Shape3 in) const override { return in; }

 private:
  Activation kind_;
  Mat input_, output_;
};

/// Inverted dropout; identity in inference mode.
class Dropout final : public Layer {
 public:
  Dropout(double rate, Rng rng) : rate_(rate), rng_(std::move(rng)) {}

  Tensor forward(const Tensor& x, Mode mode) override {
    active_ = mode == Mode::Train && rate_ > 0.0;
    if (!active_) return x;
    mask_ = Mat(x.data.rows(), x.data.cols());
    const double keep = 1.0 - rate_;
    for (Eigen::Index i = 0; i < mask_.size(); ++i) mask_.data()[i] = rng_.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor y(x.n, x.shape);
    y.data = x.data.cwiseProduct(mask_);
    return y;
  }

  Tensor backward(const Tensor& g) override {
    if (!active_) return g;
    Tensor dx(g.n, g.shape);
    dx.data = g.data.cwiseProduct(mask_);
    return dx;
  }

  [[nodiscard]] Shape3 output_shape(Shape3 in) const override { return in; }

 private:
  double rate_;
  Rng rng_;
  Mat mask_;
  bool active_ = false;
};

/// Layers applied in order.
class Sequential {
 public:
  template <class L, class... Args>
  L& add(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  Tensor forward(const Tensor& x, Mode mode) {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor backward(const Tensor& g) {
    Tensor d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = (*it)->backward(d);
    return d;
  }

  void collect(std::vector<Param*>& out) {
    for (auto& l : layers_) l->collect(out);
  }

  [[nodiscard]] Shape3 output_shape(Shape3 in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  [[nodiscard]] std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace arn
