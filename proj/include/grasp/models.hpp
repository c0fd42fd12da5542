#pragma once

// Differentiable manipulation models. Every model exposes a forward pass and
// a vector-Jacobian product so output-space losses can be pulled back onto
// the input image without materializing the Jacobian.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/image.hpp"
#include "grasp/random.hpp"

namespace grasp {

class ManipulationModel {
 public:
  virtual ~ManipulationModel() = default;

  virtual std::string name() const = 0;
  virtual Shape input_dims() const = 0;
  virtual PixelRange output_range() const = 0;

  virtual ImageTensor forward(const ImageTensor& x) const = 0;
  // J(x)^T * cotangent.
  virtual ImageTensor vjp(const ImageTensor& x, const ImageTensor& cotangent) const = 0;

 protected:
  void check_input(const ImageTensor& x) const {
    if (x.shape() != input_dims()) {
      throw ShapeError(name() + ": expected input " + input_dims().str() + ", got " +
                       x.shape().str());
    }
  }
};

class IdentityModel final : public ManipulationModel {
 public:
  explicit IdentityModel(Shape dims, PixelRange range = {}) : dims_(dims), range_(range) {}

  std::string name() const override { return "identity"; }
  Shape input_dims() const override { return dims_; }
  PixelRange output_range() const override { return range_; }

  ImageTensor forward(const ImageTensor& x) const override {
    check_input(x);
    ImageTensor y = x;
    y.set_range(range_);
    return y;
  }

  ImageTensor vjp(const ImageTensor& x, const ImageTensor& cotangent) const override {
    check_input(x);
    require_same_shape(x, cotangent, "identity vjp");
    return cotangent;
  }

 private:
  Shape dims_;
  PixelRange range_;
};

// y[c] = gain[c] * x[c] + bias[c]
class AffineModel final : public ManipulationModel {
 public:
  AffineModel(Shape dims, std::vector<double> gain, std::vector<double> bias)
      : dims_(dims), gain_(std::move(gain)), bias_(std::move(bias)) {
    if (gain_.size() != dims_.channels || bias_.size() != dims_.channels) {
      throw InvalidInput("AffineModel: need one gain and one bias per channel");
    }
    range_ = {1e300, -1e300};
    for (std::size_t c = 0; c < dims_.channels; ++c) {
      const double a = gain_[c] * 0.0 + bias_[c];
      const double b = gain_[c] * 1.0 + bias_[c];
      range_.lo = std::min({range_.lo, a, b});
      range_.hi = std::max({range_.hi, a, b});
    }
    if (range_.hi <= range_.lo) range_.hi = range_.lo + 1.0;
  }

  static AffineModel uniform(Shape dims, double gain, double bias) {
    return AffineModel(dims, std::vector<double>(dims.channels, gain),
                       std::vector<double>(dims.channels, bias));
  }

  std::string name() const override { return "affine"; }
  Shape input_dims() const override { return dims_; }
  PixelRange output_range() const override { return range_; }

  ImageTensor forward(const ImageTensor& x) const override {
    check_input(x);
    ImageTensor y = x;
    y.set_range(range_);
    const std::size_t ch = dims_.channels;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = gain_[i % ch] * x[i] + bias_[i % ch];
    return y;
  }

  ImageTensor vjp(const ImageTensor& x, const ImageTensor& cotangent) const override {
    check_input(x);
    require_same_shape(x, cotangent, "affine vjp");
    ImageTensor g = cotangent;
    g.set_range(x.range());
    const std::size_t ch = dims_.channels;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= gain_[i % ch];
    return g;
  }

 private:
  Shape dims_;
  std::vector<double> gain_;
  std::vector<double> bias_;
  PixelRange range_;
};

namespace detail {

// 3x3 same-padded (zero) stride-1 convolution, HWC layout.
// weights[((o * cin + i) * 3 + ky) * 3 + kx]
struct Conv3x3 {
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  double w(std::size_t o, std::size_t i, std::size_t ky, std::size_t kx) const {
    return weights[((o * cin + i) * 3 + ky) * 3 + kx];
  }

  std::vector<double> apply(const std::vector<double>& in, std::size_t h, std::size_t wd) const {
    std::vector<double> out(h * wd * cout);
    std::vector<double> acc(cout);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wd; ++x) {
        for (std::size_t o = 0; o < cout; ++o) acc[o] = bias[o];
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
            const double* px = &in[(static_cast<std::size_t>(sy) * wd + static_cast<std::size_t>(sx)) * cin];
            for (std::size_t o = 0; o < cout; ++o) {
              double s = 0.0;
              for (std::size_t i = 0; i < cin; ++i) s += w(o, i, ky, kx) * px[i];
              acc[o] += s;
            }
          }
        }
        for (std::size_t o = 0; o < cout; ++o) out[(y * wd + x) * cout + o] = acc[o];
      }
    }
    return out;
  }

  // Transpose of apply() (without bias) acting on an output-space cotangent.
  std::vector<double> apply_transpose(const std::vector<double>& dout, std::size_t h,
                                      std::size_t wd) const {
    std::vector<double> din(h * wd * cin, 0.0);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < wd; ++x) {
        const double* g = &dout[(y * wd + x) * cout];
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(wd)) continue;
            double* px = &din[(static_cast<std::size_t>(sy) * wd + static_cast<std::size_t>(sx)) * cin];
            for (std::size_t i = 0; i < cin; ++i) {
              double s = 0.0;
              for (std::size_t o = 0; o < cout; ++o) s += w(o, i, ky, kx) * g[o];
              px[i] += s;
            }
          }
        }
      }
    }
    return din;
  }
};

}  // namespace detail

struct ConvSurrogateParams {
  std::uint64_t seed = 42;
  std::size_t hidden_channels = 16;
  double weight_scale = 0.5;  // weights and biases ~ U[-scale, scale]
  double input_gain = 2.0;    // u = input_gain * (x - 0.5)
};

// Two-layer 3x3 conv + tanh "attribute editor" stand-in.
// The input is recentred and scaled by input_gain (gain 2 maps [0,1] onto
// [-1,1], as image generators expect); the output lies in (-1, 1).
class ConvSurrogate final : public ManipulationModel {
 public:
  ConvSurrogate(Shape dims, ConvSurrogateParams params = {}) : dims_(dims), params_(params) {
    if (dims.channels == 0 || params.hidden_channels == 0) {
      throw InvalidInput("ConvSurrogate: channel counts must be positive");
    }
    Rng rng(params.seed);
    const double s = params.weight_scale;
    auto init = [&](detail::Conv3x3& layer, std::size_t cin, std::size_t cout) {
      layer.cin = cin;
      layer.cout = cout;
      layer.weights.resize(cout * cin * 9);
      layer.bias.resize(cout);
      for (double& v : layer.weights) v = rng.uniform(-s, s);
      for (double& v : layer.bias) v = rng.uniform(-s, s);
    };
    init(l1_, dims.channels, params.hidden_channels);
    init(l2_, params.hidden_channels, dims.channels);
  }

  std::string name() const override { return "conv"; }
  Shape input_dims() const override { return dims_; }
  PixelRange output_range() const override { return {-1.0, 1.0}; }
  const ConvSurrogateParams& params() const { return params_; }
  const detail::Conv3x3& layer1() const { return l1_; }
  const detail::Conv3x3& layer2() const { return l2_; }

  ImageTensor forward(const ImageTensor& x) const override {
    check_input(x);
    Activations a = run(x);
    return ImageTensor(dims_, std::move(a.out), output_range());
  }

  ImageTensor vjp(const ImageTensor& x, const ImageTensor& cotangent) const override {
    check_input(x);
    if (cotangent.shape() != dims_) throw ShapeError("conv vjp: cotangent shape mismatch");
    const Activations a = run(x);
    const std::size_t h = dims_.height, w = dims_.width;
    std::vector<double> d2(a.out.size());
    for (std::size_t i = 0; i < d2.size(); ++i) d2[i] = cotangent[i] * (1.0 - a.out[i] * a.out[i]);
    std::vector<double> d1 = l2_.apply_transpose(d2, h, w);
    for (std::size_t i = 0; i < d1.size(); ++i) d1[i] *= 1.0 - a.hidden[i] * a.hidden[i];
    std::vector<double> d0 = l1_.apply_transpose(d1, h, w);
    for (double& v : d0) v *= params_.input_gain;
    return ImageTensor(dims_, std::move(d0), x.range());
  }

 private:
  struct Activations {
    std::vector<double> hidden;
    std::vector<double> out;
  };

  Activations run(const ImageTensor& x) const {
    const std::size_t h = dims_.height, w = dims_.width;
    std::vector<double> u(x.size());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = params_.input_gain * (x[i] - 0.5);
    Activations a;
    a.hidden = l1_.apply(u, h, w);
    for (double& v : a.hidden) v = std::tanh(v);
    a.out = l2_.apply(a.hidden, h, w);
    for (double& v : a.out) v = std::tanh(v);
    return a;
  }

  Shape dims_;
  ConvSurrogateParams params_;
  detail::Conv3x3 l1_;
  detail::Conv3x3 l2_;
};

}  // namespace grasp
