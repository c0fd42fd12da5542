#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "grasp/image.hpp"
#include "grasp/random.hpp"

namespace grasp::testing {

inline ImageTensor random_image(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  ImageTensor x(s);
  for (double& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

inline ImageTensor from_values(Shape s, std::vector<double> v) { return ImageTensor(s, std::move(v)); }

// Brute-force windowed SSIM: the 2-D Gaussian window is built directly from
// exp(-(dx^2 + dy^2) / 2 sigma^2) and every statistic is summed per window.
inline double ssim_bruteforce(const ImageTensor& a, const ImageTensor& b, std::size_t n,
                              double sigma, double c1, double c2, bool literal = false) {
  const int r = static_cast<int>(n / 2);
  std::vector<double> w(n * n);
  double total = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>((dy + r) * static_cast<int>(n) + dx + r)] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < a.channels(); ++c)
    for (std::size_t y = 0; y + n <= a.height(); ++y)
      for (std::size_t x = 0; x + n <= a.width(); ++x) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            ma += w[i * n + j] * a.at(y + i, x + j, c);
            mb += w[i * n + j] * b.at(y + i, x + j, c);
          }
        double va = 0, vb = 0, cov = 0;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double da = a.at(y + i, x + j, c) - ma;
            const double db = b.at(y + i, x + j, c) - mb;
            va += w[i * n + j] * da * da;
            vb += w[i * n + j] * db * db;
            cov += w[i * n + j] * da * db;
          }
        const double cross = literal ? std::sqrt(std::max(va, 0.0) * std::max(vb, 0.0)) : cov;
        acc += (2 * ma * mb + c1) * (2 * cross + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return acc / static_cast<double>(count);
}

}  // namespace grasp::testing
