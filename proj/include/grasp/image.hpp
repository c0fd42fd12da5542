#pragma once

// Image tensors, norms and the epsilon-ball clipping primitives.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grasp/error.hpp"

namespace grasp {

struct Shape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << height << "x" << width << "x" << channels;
    return os.str();
  }
};

// Closed interval of legal pixel values.
struct PixelRange {
  double lo = 0.0;
  double hi = 1.0;

  double width() const { return hi - lo; }
  bool operator==(const PixelRange&) const = default;
};

enum class NormKind { L1Sum, L2Mean, LInf };

// H x W x C image stored row-major with interleaved channels.
class ImageTensor {
 public:
  ImageTensor() = default;

  explicit ImageTensor(Shape shape, double fill = 0.0, PixelRange range = {})
      : shape_(shape), range_(range), data_(shape.size(), fill) {}

  ImageTensor(Shape shape, std::vector<double> data, PixelRange range = {})
      : shape_(shape), range_(range), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("ImageTensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  const PixelRange& range() const { return range_; }
  void set_range(PixelRange r) { range_ = r; }

  std::span<const double> values() const& { return data_; }
  std::span<double> values() & { return data_; }
  // A span into a temporary would dangle.
  std::span<const double> values() const&& = delete;
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::size_t index(std::size_t y, std::size_t x, std::size_t c) const {
    return (y * shape_.width + x) * shape_.channels + c;
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return data_[index(y, x, c)]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return data_[index(y, x, c)]; }

  // Same shape and range, zero data.
  ImageTensor zeros_like() const { return ImageTensor(shape_, 0.0, range_); }

  bool operator==(const ImageTensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_{};
  PixelRange range_{};
  std::vector<double> data_;
};

inline void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                     b.shape().str());
  }
}

inline void require_even_dims(const ImageTensor& x, const char* what) {
  if (x.height() % 2 != 0 || x.width() % 2 != 0) {
    throw ShapeError(std::string(what) + ": height and width must be even, got " +
                     x.shape().str());
  }
}

inline double norm(const ImageTensor& x, NormKind kind) {
  if (x.empty()) throw InvalidInput("norm: empty tensor");
  double acc = 0.0;
  switch (kind) {
    case NormKind::L1Sum:
      for (double v : x.values()) acc += std::abs(v);
      return acc;
    case NormKind::L2Mean:
      for (double v : x.values()) acc += v * v;
      return acc / static_cast<double>(x.size());
    case NormKind::LInf:
      for (double v : x.values()) acc = std::max(acc, std::abs(v));
      return acc;
  }
  return acc;
}

inline double dot(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline ImageTensor add(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "add");
  ImageTensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += b[i];
  return out;
}

inline ImageTensor sub(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "sub");
  ImageTensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

inline ImageTensor scale(const ImageTensor& a, double k) {
  ImageTensor out = a;
  for (double& v : out.values()) v *= k;
  return out;
}

// a + k * b
inline ImageTensor axpy(const ImageTensor& a, double k, const ImageTensor& b) {
  require_same_shape(a, b, "axpy");
  ImageTensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += k * b[i];
  return out;
}

inline ImageTensor operator+(const ImageTensor& a, const ImageTensor& b) { return add(a, b); }
inline ImageTensor operator-(const ImageTensor& a, const ImageTensor& b) { return sub(a, b); }
inline ImageTensor operator*(double k, const ImageTensor& a) { return scale(a, k); }

inline ImageTensor clip_to_range(const ImageTensor& x, PixelRange range) {
  ImageTensor out = x;
  for (double& v : out.values()) v = std::clamp(v, range.lo, range.hi);
  return out;
}

// Nearest point of the l-inf ball of radius epsilon around anchor, then
// clamped into the anchor's pixel range.
inline ImageTensor clip_to_ball(const ImageTensor& candidate, const ImageTensor& anchor,
                                double epsilon) {
  require_same_shape(candidate, anchor, "clip_to_ball");
  if (!(epsilon >= 0.0)) throw InvalidInput("clip_to_ball: epsilon must be >= 0");
  const PixelRange range = anchor.range();
  ImageTensor out = candidate;
  out.set_range(range);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double a = anchor[i];
    double v = std::clamp(candidate[i], a - epsilon, a + epsilon);
    // Range clipping moves v toward the anchor when the anchor itself is in
    // range, so the ball constraint survives it.
    out[i] = std::clamp(v, range.lo, range.hi);
  }
  return out;
}

inline double max_abs_diff(const ImageTensor& a, const ImageTensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace grasp
