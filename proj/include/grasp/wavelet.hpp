#pragma once

// One-level orthonormal 2-D Haar transform and the low-frequency
// reconstruction operator built on it.
//
// For every 2x2 block [a b; c d] of every channel:
//   ll = (a + b + c + d) / 2     hl = (a + b - c - d) / 2
//   lh = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
// The first letter names the vertical filter, the second the horizontal one.

#include <cstddef>

#include "grasp/image.hpp"

namespace grasp {

struct SubbandSet {
  ImageTensor ll;
  ImageTensor lh;
  ImageTensor hl;
  ImageTensor hh;
  std::size_t source_height = 0;
  std::size_t source_width = 0;
};

inline SubbandSet dwt_haar(const ImageTensor& x) {
  require_even_dims(x, "dwt_haar");
  const std::size_t h2 = x.height() / 2;
  const std::size_t w2 = x.width() / 2;
  const std::size_t ch = x.channels();
  const Shape sub{h2, w2, ch};
  SubbandSet s{ImageTensor(sub, 0.0, x.range()), ImageTensor(sub, 0.0, x.range()),
               ImageTensor(sub, 0.0, x.range()), ImageTensor(sub, 0.0, x.range()),
               x.height(), x.width()};
  for (std::size_t i = 0; i < h2; ++i) {
    for (std::size_t j = 0; j < w2; ++j) {
      for (std::size_t c = 0; c < ch; ++c) {
        const double a = x.at(2 * i, 2 * j, c);
        const double b = x.at(2 * i, 2 * j + 1, c);
        const double cc = x.at(2 * i + 1, 2 * j, c);
        const double d = x.at(2 * i + 1, 2 * j + 1, c);
        s.ll.at(i, j, c) = 0.5 * (a + b + cc + d);
        s.hl.at(i, j, c) = 0.5 * (a + b - cc - d);
        s.lh.at(i, j, c) = 0.5 * (a - b + cc - d);
        s.hh.at(i, j, c) = 0.5 * (a - b - cc + d);
      }
    }
  }
  return s;
}

inline ImageTensor idwt_haar(const SubbandSet& s) {
  const Shape sub = s.ll.shape();
  if (s.lh.shape() != sub || s.hl.shape() != sub || s.hh.shape() != sub) {
    throw ShapeError("idwt_haar: subbands have inconsistent shapes");
  }
  if (s.source_height != 2 * sub.height || s.source_width != 2 * sub.width) {
    throw ShapeError("idwt_haar: source dimensions do not match subbands");
  }
  ImageTensor x(Shape{s.source_height, s.source_width, sub.channels}, 0.0, s.ll.range());
  for (std::size_t i = 0; i < sub.height; ++i) {
    for (std::size_t j = 0; j < sub.width; ++j) {
      for (std::size_t c = 0; c < sub.channels; ++c) {
        const double ll = s.ll.at(i, j, c);
        const double lh = s.lh.at(i, j, c);
        const double hl = s.hl.at(i, j, c);
        const double hh = s.hh.at(i, j, c);
        x.at(2 * i, 2 * j, c) = 0.5 * (ll + hl + lh + hh);
        x.at(2 * i, 2 * j + 1, c) = 0.5 * (ll + hl - lh - hh);
        x.at(2 * i + 1, 2 * j, c) = 0.5 * (ll - hl + lh - hh);
        x.at(2 * i + 1, 2 * j + 1, c) = 0.5 * (ll - hl - lh + hh);
      }
    }
  }
  return x;
}

// IDWT of the approximation subband alone. Self-adjoint and idempotent.
inline ImageTensor low_freq_reconstruct(const ImageTensor& x) {
  SubbandSet s = dwt_haar(x);
  s.lh = s.ll.zeros_like();
  s.hl = s.ll.zeros_like();
  s.hh = s.ll.zeros_like();
  return idwt_haar(s);
}

}  // namespace grasp
