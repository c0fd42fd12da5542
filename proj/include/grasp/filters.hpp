#pragma once

// Spatial filters shared by the engine and the robustness battery.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/image.hpp"
#include "grasp/losses.hpp"

namespace grasp {

// Mirror index without repeating the edge sample (d c b | a b c d | c b a).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (static_cast<std::ptrdiff_t>(n) - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::ptrdiff_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

// Per-channel separable correlation with reflect padding. `taps` has odd size.
inline ImageTensor separable_filter(const ImageTensor& x, const std::vector<double>& taps) {
  const std::size_t h = x.height(), w = x.width(), ch = x.channels();
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(taps.size() / 2);
  ImageTensor tmp = x.zeros_like();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t c = 0; c < ch; ++c) {
        double s = 0.0;
        for (std::ptrdiff_t t = -r; t <= r; ++t) {
          const std::size_t sx = reflect_index(static_cast<std::ptrdiff_t>(xx) + t, w);
          s += taps[static_cast<std::size_t>(t + r)] * x.at(y, sx, c);
        }
        tmp.at(y, xx, c) = s;
      }
  ImageTensor out = x.zeros_like();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx)
      for (std::size_t c = 0; c < ch; ++c) {
        double s = 0.0;
        for (std::ptrdiff_t t = -r; t <= r; ++t) {
          const std::size_t sy = reflect_index(static_cast<std::ptrdiff_t>(y) + t, h);
          s += taps[static_cast<std::size_t>(t + r)] * tmp.at(sy, xx, c);
        }
        out.at(y, xx, c) = s;
      }
  return out;
}

// Gaussian blur with sigma = kernel / 6. Kernel 1 is the identity.
inline ImageTensor gaussian_blur(const ImageTensor& x, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw InvalidInput("gaussian_blur: kernel must be odd");
  if (kernel == 1) return x;
  return separable_filter(x, gaussian_kernel_1d(kernel, static_cast<double>(kernel) / 6.0));
}

inline ImageTensor average_blur(const ImageTensor& x, std::size_t kernel) {
  if (kernel == 0 || kernel % 2 == 0) throw InvalidInput("average_blur: kernel must be odd");
  if (kernel == 1) return x;
  return separable_filter(x, std::vector<double>(kernel, 1.0 / static_cast<double>(kernel)));
}

// Counter-clockwise (as displayed) rotation about the image center.
// Multiples of 180 degrees, and of 90 degrees on square images, are exact
// index permutations; other angles use bilinear sampling with zero fill.
inline ImageTensor rotate(const ImageTensor& x, double degrees) {
  const std::size_t h = x.height(), w = x.width(), ch = x.channels();
  double norm_deg = std::fmod(degrees, 360.0);
  if (norm_deg < 0) norm_deg += 360.0;
  if (norm_deg == 0.0) return x;
  ImageTensor out = x.zeros_like();
  if (norm_deg == 180.0 || (h == w && (norm_deg == 90.0 || norm_deg == 270.0))) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        std::size_t sy = 0, sx = 0;
        if (norm_deg == 180.0) {
          sy = h - 1 - y;
          sx = w - 1 - xx;
        } else if (norm_deg == 90.0) {
          sy = xx;
          sx = w - 1 - y;
        } else {
          sy = h - 1 - xx;
          sx = y;
        }
        for (std::size_t c = 0; c < ch; ++c) out.at(y, xx, c) = x.at(sy, sx, c);
      }
    return out;
  }
  const double theta = norm_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  constexpr double tol = 1e-9;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t xx = 0; xx < w; ++xx) {
      const double u = static_cast<double>(xx) - cx;
      const double v = static_cast<double>(y) - cy;
      double sx = u * cs - v * sn + cx;
      double sy = u * sn + v * cs + cy;
      if (sx < -tol || sy < -tol || sx > static_cast<double>(w - 1) + tol ||
          sy > static_cast<double>(h - 1) + tol) {
        continue;
      }
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double top = (1 - fx) * x.at(y0, x0, c) + fx * x.at(y0, x1, c);
        const double bot = (1 - fx) * x.at(y1, x0, c) + fx * x.at(y1, x1, c);
        out.at(y, xx, c) = (1 - fy) * top + fy * bot;
      }
    }
  return out;
}

// Bilinear resize with pixel-center alignment.
inline ImageTensor resize_bilinear(const ImageTensor& x, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw InvalidInput("resize_bilinear: empty target");
  if (x.height() == out_h && x.width() == out_w) return x;
  const std::size_t h = x.height(), w = x.width(), ch = x.channels();
  ImageTensor out(Shape{out_h, out_w, ch}, 0.0, x.range());
  const double ry = static_cast<double>(h) / static_cast<double>(out_h);
  const double rx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((static_cast<double>(y) + 0.5) * ry - 0.5, 0.0,
                                 static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t xx = 0; xx < out_w; ++xx) {
      const double sx = std::clamp((static_cast<double>(xx) + 0.5) * rx - 0.5, 0.0,
                                   static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double top = (1 - fx) * x.at(y0, x0, c) + fx * x.at(y0, x1, c);
        const double bot = (1 - fx) * x.at(y1, x0, c) + fx * x.at(y1, x1, c);
        out.at(y, xx, c) = (1 - fy) * top + fy * bot;
      }
    }
  }
  return out;
}

}  // namespace grasp
