#pragma once

// Seeded stand-in photographs: per channel, a base tone and a smooth separable
// sinusoidal pattern, and a little uniform noise, clamped to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "grasp/image.hpp"
#include "grasp/random.hpp"

namespace grasp {

inline ImageTensor synthetic_image(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  struct Tone {
    double base, fx, fy, phase;
  };
  std::vector<Tone> tones(shape.channels);
  for (Tone& t : tones) {
    t.base = rng.uniform(0.2, 0.8);
    t.fx = rng.uniform(0.5, 3.0);
    t.fy = rng.uniform(0.5, 3.0);
    t.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  ImageTensor img(shape);
  for (std::size_t y = 0; y < shape.height; ++y)
    for (std::size_t x = 0; x < shape.width; ++x)
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const Tone& t = tones[c];
        const double pattern = 0.25 * std::sin(t.fx * static_cast<double>(x) / 10.0 + t.phase) *
                               std::cos(t.fy * static_cast<double>(y) / 10.0);
        const double v = t.base + pattern + 0.05 * rng.uniform(-1.0, 1.0);
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
  return img;
}

inline constexpr std::uint64_t kSuiteSeedBase = 1000;

// The fixed evaluation suite: `count` images seeded kSuiteSeedBase + i.
inline std::vector<ImageTensor> synthetic_suite(std::size_t count, Shape shape = {64, 64, 3}) {
  std::vector<ImageTensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(shape, kSuiteSeedBase + i));
  return out;
}

}  // namespace grasp
