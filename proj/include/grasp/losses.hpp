#pragma once

// Supervision terms of the defense objective. Each returns its raw value and
// the analytic gradient with respect to the adversarial image; the engine
// decides whether a term is ascended or descended.

#include <cmath>
#include <cstddef>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/image.hpp"
#include "grasp/models.hpp"
#include "grasp/wavelet.hpp"

namespace grasp {

struct LossEval {
  double value = 0.0;
  ImageTensor grad_wrt_adv;
};

struct SsimConfig {
  std::size_t window_size = 11;
  double sigma = 1.5;
  double c1 = 1e-4;  // (0.01 L)^2
  double c2 = 9e-4;  // (0.03 L)^2
  // Use 2*sigma_x*sigma_y in place of 2*cov(x, y) in the contrast-structure term.
  bool literal_form = false;

  static SsimConfig for_range(PixelRange range, std::size_t window = 11, double sigma = 1.5) {
    SsimConfig cfg;
    const double l = range.width();
    cfg.window_size = window;
    cfg.sigma = sigma;
    cfg.c1 = (0.01 * l) * (0.01 * l);
    cfg.c2 = (0.03 * l) * (0.03 * l);
    return cfg;
  }

  void validate() const {
    if (window_size == 0 || window_size % 2 == 0) {
      throw InvalidInput("ssim: window size must be odd and positive");
    }
    if (!(sigma > 0.0)) throw InvalidInput("ssim: sigma must be positive");
    if (!(c1 > 0.0) || !(c2 > 0.0)) throw InvalidInput("ssim: stabilizers must be positive");
  }
};

// Normalized 1-D Gaussian taps, size odd.
inline std::vector<double> gaussian_kernel_1d(std::size_t size, double sigma) {
  if (size == 0 || size % 2 == 0) throw InvalidInput("gaussian kernel size must be odd");
  std::vector<double> k(size);
  const double r = static_cast<double>(size / 2);
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - r;
    k[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Outer product of the 1-D taps; the SSIM window.
inline std::vector<double> ssim_window(const SsimConfig& cfg) {
  const auto k = gaussian_kernel_1d(cfg.window_size, cfg.sigma);
  std::vector<double> w(k.size() * k.size());
  for (std::size_t i = 0; i < k.size(); ++i)
    for (std::size_t j = 0; j < k.size(); ++j) w[i * k.size() + j] = k[i] * k[j];
  return w;
}

namespace detail {

// Valid-position separable correlation of one channel plane.
// Output is (h - k + 1) x (w - k + 1).
inline std::vector<double> valid_filter(const std::vector<double>& plane, std::size_t h,
                                        std::size_t w, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * plane[y * w + x + t];
      tmp[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += k[t] * tmp[(y + t) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

// Adjoint of valid_filter: scatters an (h-k+1) x (w-k+1) map back to h x w.
inline std::vector<double> valid_filter_adjoint(const std::vector<double>& map, std::size_t h,
                                                std::size_t w, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const double v = map[y * ow + x];
      for (std::size_t t = 0; t < n; ++t) tmp[(y + t) * ow + x] += k[t] * v;
    }
  std::vector<double> out(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const double v = tmp[y * ow + x];
      for (std::size_t t = 0; t < n; ++t) out[y * w + x + t] += k[t] * v;
    }
  return out;
}

inline std::vector<double> channel_plane(const ImageTensor& img, std::size_t c) {
  std::vector<double> p(img.height() * img.width());
  const std::size_t ch = img.channels();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img[i * ch + c];
  return p;
}

}  // namespace detail

// Mean local SSIM over valid Gaussian-window positions and channels, with its
// gradient with respect to x_adv.
inline LossEval ssim_loss(const ImageTensor& x, const ImageTensor& x_adv, const SsimConfig& cfg) {
  require_same_shape(x, x_adv, "ssim_loss");
  cfg.validate();
  const std::size_t h = x.height(), w = x.width(), ch = x.channels();
  const std::size_t n = cfg.window_size;
  if (h < n || w < n) {
    throw InvalidInput("ssim_loss: image " + x.shape().str() + " smaller than window " +
                       std::to_string(n));
  }
  const auto k = gaussian_kernel_1d(n, cfg.sigma);
  const std::size_t oh = h - n + 1, ow = w - n + 1;
  const double count = static_cast<double>(oh * ow * ch);

  LossEval out{0.0, x_adv.zeros_like()};
  double total = 0.0;
  for (std::size_t c = 0; c < ch; ++c) {
    const auto px = detail::channel_plane(x, c);
    const auto py = detail::channel_plane(x_adv, c);
    std::vector<double> pxx(px.size()), pyy(px.size()), pxy(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
      pxx[i] = px[i] * px[i];
      pyy[i] = py[i] * py[i];
      pxy[i] = px[i] * py[i];
    }
    const auto mx = detail::valid_filter(px, h, w, k);
    const auto my = detail::valid_filter(py, h, w, k);
    const auto sxx = detail::valid_filter(pxx, h, w, k);
    const auto syy = detail::valid_filter(pyy, h, w, k);
    const auto sxy = detail::valid_filter(pxy, h, w, k);

    std::vector<double> dm(mx.size()), ds(mx.size()), dc(mx.size());
    for (std::size_t p = 0; p < mx.size(); ++p) {
      const double mux = mx[p], muy = my[p];
      const double vx = sxx[p] - mux * mux;
      const double vy = syy[p] - muy * muy;
      const double cov = sxy[p] - mux * muy;
      const double a1 = 2.0 * mux * muy + cfg.c1;
      const double b1 = mux * mux + muy * muy + cfg.c1;
      const double b2 = vx + vy + cfg.c2;
      double a2;
      double sdx = 0.0, sdy = 0.0;
      if (cfg.literal_form) {
        sdx = std::sqrt(std::max(vx, 0.0));
        sdy = std::sqrt(std::max(vy, 0.0));
        a2 = 2.0 * sdx * sdy + cfg.c2;
      } else {
        a2 = 2.0 * cov + cfg.c2;
      }
      const double s = (a1 * a2) / (b1 * b2);
      total += s;

      // Partials of s with respect to the window moments of x_adv:
      // m = mean, q = second moment, r = cross moment with x.
      double ds_dm = s * (2.0 * mux / a1 - 2.0 * muy / b1 + 2.0 * muy / b2);
      double ds_dq = -s / b2;
      double ds_dr = 0.0;
      if (cfg.literal_form) {
        if (sdy > 0.0) {
          ds_dm += s / a2 * (2.0 * sdx) * (-muy / sdy);
          ds_dq += s / a2 * (2.0 * sdx) * (0.5 / sdy);
        }
      } else {
        ds_dm += s / a2 * (-2.0 * mux);
        ds_dr = s / a2 * 2.0;
      }
      dm[p] = ds_dm / count;
      ds[p] = ds_dq / count;
      dc[p] = ds_dr / count;
    }
    const auto gm = detail::valid_filter_adjoint(dm, h, w, k);
    const auto gs = detail::valid_filter_adjoint(ds, h, w, k);
    const auto gc = detail::valid_filter_adjoint(dc, h, w, k);
    for (std::size_t i = 0; i < px.size(); ++i) {
      out.grad_wrt_adv[i * ch + c] = gm[i] + 2.0 * py[i] * gs[i] + px[i] * gc[i];
    }
  }
  out.value = total / count;
  return out;
}

// Sum of squared output differences, pulled back through the model.
// `clean_output` is M(x), supplied so iterative callers compute it once.
inline LossEval mse_output_loss_from_clean(const ManipulationModel& model,
                                           const ImageTensor& clean_output,
                                           const ImageTensor& x_adv) {
  try {
    const ImageTensor y_adv = model.forward(x_adv);
    require_same_shape(clean_output, y_adv, "mse_output_loss");
    ImageTensor cot = y_adv.zeros_like();
    double value = 0.0;
    for (std::size_t i = 0; i < cot.size(); ++i) {
      const double d = clean_output[i] - y_adv[i];
      value += d * d;
      cot[i] = -2.0 * d;
    }
    ImageTensor grad = model.vjp(x_adv, cot);
    require_same_shape(grad, x_adv, "mse_output_loss gradient");
    grad.set_range(x_adv.range());
    return {value, std::move(grad)};
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelError(std::string("model evaluation failed: ") + e.what());
  }
}

inline LossEval mse_output_loss(const ManipulationModel& model, const ImageTensor& x,
                                const ImageTensor& x_adv) {
  require_same_shape(x, x_adv, "mse_output_loss");
  return mse_output_loss_from_clean(model, model.forward(x), x_adv);
}

// ||phi(x) - phi(x_adv)||_1 with subgradient 0 at exact ties.
inline LossEval lf_loss(const ImageTensor& x, const ImageTensor& x_adv) {
  require_same_shape(x, x_adv, "lf_loss");
  require_even_dims(x, "lf_loss");
  const ImageTensor d = low_freq_reconstruct(x) - low_freq_reconstruct(x_adv);
  ImageTensor sign = d.zeros_like();
  double value = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    value += std::abs(d[i]);
    sign[i] = d[i] > 0.0 ? 1.0 : (d[i] < 0.0 ? -1.0 : 0.0);
  }
  ImageTensor grad = scale(low_freq_reconstruct(sign), -1.0);
  grad.set_range(x_adv.range());
  return {value, std::move(grad)};
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename F>
ImageTensor finite_diff_grad(F&& f, const ImageTensor& x, double h) {
  if (!(h > 0.0)) throw InvalidInput("finite_diff_grad: step must be positive");
  ImageTensor grad = x.zeros_like();
  ImageTensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(static_cast<const ImageTensor&>(probe));
    probe[i] = orig - h;
    const double fm = f(static_cast<const ImageTensor&>(probe));
    probe[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// ||a - b||_2 / max(||a||_2, ||b||_2); zero when both vanish.
inline double relative_error(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "relative_error");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace grasp
