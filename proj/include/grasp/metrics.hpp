#pragma once

// Defense-effectiveness and imperceptibility metrics, plus the post-processing
// battery used to probe robustness.
//
// Scale conventions:
//  * Output distances (l2/l1, DSR) are measured after mapping the model's
//    declared output range onto a unit-width interval; a defense succeeds when
//    the mean squared output difference strictly exceeds 0.05.
//  * The low-frequency metric is a per-image sum of squared differences on a
//    0-255 pixel scale, averaged over images.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/filters.hpp"
#include "grasp/image.hpp"
#include "grasp/losses.hpp"
#include "grasp/models.hpp"
#include "grasp/wavelet.hpp"

namespace grasp {

inline constexpr double kDefenseThreshold = 0.05;

using ImagePair = std::pair<ImageTensor, ImageTensor>;

inline double l2_output_distance(const ImageTensor& y, const ImageTensor& y_adv,
                                 double range_width) {
  require_same_shape(y, y_adv, "l2_output_distance");
  if (!(range_width > 0.0)) throw InvalidInput("l2_output_distance: range width must be > 0");
  if (y.empty()) throw InvalidInput("l2_output_distance: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = (y[i] - y_adv[i]) / range_width;
    acc += d * d;
  }
  return acc / static_cast<double>(y.size());
}

inline double l2_output_distance(const ImageTensor& y, const ImageTensor& y_adv) {
  return l2_output_distance(y, y_adv, y.range().width());
}

inline double l1_output_distance(const ImageTensor& y, const ImageTensor& y_adv,
                                 double range_width) {
  require_same_shape(y, y_adv, "l1_output_distance");
  if (!(range_width > 0.0)) throw InvalidInput("l1_output_distance: range width must be > 0");
  if (y.empty()) throw InvalidInput("l1_output_distance: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - y_adv[i]) / range_width;
  return acc / static_cast<double>(y.size());
}

inline double l1_output_distance(const ImageTensor& y, const ImageTensor& y_adv) {
  return l1_output_distance(y, y_adv, y.range().width());
}

inline bool defense_success(double l2_distance) { return l2_distance > kDefenseThreshold; }

// Fraction of output pairs whose distance exceeds the threshold.
inline double dsr(const std::vector<ImagePair>& outputs) {
  if (outputs.empty()) throw InvalidInput("dsr: empty list");
  std::size_t hits = 0;
  for (const auto& [y, y_adv] : outputs) hits += defense_success(l2_output_distance(y, y_adv));
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// +infinity for identical images.
inline double psnr(const ImageTensor& x, const ImageTensor& x_adv) {
  require_same_shape(x, x_adv, "psnr");
  if (x.empty()) throw InvalidInput("psnr: empty tensors");
  double mse = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_adv[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double l = x.range().width();
  return 10.0 * std::log10(l * l / mse);
}

// Mean windowed SSIM used as a quality metric. Images smaller than the
// standard 11-tap window fall back to the largest odd window that fits.
inline double ssim_index(const ImageTensor& x, const ImageTensor& x_adv) {
  require_same_shape(x, x_adv, "ssim_index");
  std::size_t window = std::min<std::size_t>(11, std::min(x.height(), x.width()));
  if (window % 2 == 0) --window;
  if (window == 0) throw InvalidInput("ssim_index: empty image");
  return ssim_loss(x, x_adv, SsimConfig::for_range(x.range(), window)).value;
}

// Sum of squared low-frequency differences of one pair on a 0-255 scale.
inline double lf_distance(const ImageTensor& x, const ImageTensor& x_adv) {
  require_same_shape(x, x_adv, "lf_distance");
  const ImageTensor d = low_freq_reconstruct(x) - low_freq_reconstruct(x_adv);
  const double k = 255.0 / x.range().width();
  double acc = 0.0;
  for (double v : d.values()) acc += (v * k) * (v * k);
  return acc;
}

inline double lf_metric(const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw InvalidInput("lf_metric: empty list");
  double acc = 0.0;
  for (const auto& [x, x_adv] : pairs) acc += lf_distance(x, x_adv);
  return acc / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Robustness transforms

struct Transform {
  enum class Kind { GaussianBlur, AverageBlur, Rotate };
  Kind kind = Kind::GaussianBlur;
  double param = 1.0;  // kernel size, or angle in degrees

  static Transform gaussian(std::size_t k) { return {Kind::GaussianBlur, static_cast<double>(k)}; }
  static Transform average(std::size_t k) { return {Kind::AverageBlur, static_cast<double>(k)}; }
  static Transform rotation(double deg) { return {Kind::Rotate, deg}; }

  std::string label() const {
    std::string p = std::to_string(param);
    p.erase(p.find_last_not_of('0') + 1);
    if (!p.empty() && p.back() == '.') p.pop_back();
    switch (kind) {
      case Kind::GaussianBlur: return "gaussian_blur:" + p;
      case Kind::AverageBlur: return "average_blur:" + p;
      case Kind::Rotate: return "rotate:" + p;
    }
    return p;
  }

  // "gaussian_blur:3", "average_blur:5", "rotate:45"
  static Transform parse(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("transform needs kind:value, got " + s);
    const std::string kind = s.substr(0, colon);
    double v = 0.0;
    try {
      v = std::stod(s.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError("bad transform parameter in " + s);
    }
    if (kind == "gaussian_blur" || kind == "average_blur") {
      if (v < 1 || std::floor(v) != v || static_cast<long>(v) % 2 == 0) {
        throw ConfigError("blur kernel must be a positive odd integer: " + s);
      }
      return kind == "gaussian_blur" ? gaussian(static_cast<std::size_t>(v))
                                     : average(static_cast<std::size_t>(v));
    }
    if (kind == "rotate") return rotation(v);
    throw ConfigError("unknown transform kind " + kind);
  }
};

inline ImageTensor robustness_transform(const ImageTensor& x, const Transform& t) {
  switch (t.kind) {
    case Transform::Kind::GaussianBlur:
    case Transform::Kind::AverageBlur: {
      if (t.param < 1 || std::floor(t.param) != t.param ||
          static_cast<long>(t.param) % 2 == 0) {
        throw InvalidInput("robustness_transform: blur kernel must be odd");
      }
      const auto k = static_cast<std::size_t>(t.param);
      return t.kind == Transform::Kind::GaussianBlur ? gaussian_blur(x, k) : average_blur(x, k);
    }
    case Transform::Kind::Rotate:
      return rotate(x, t.param);
  }
  return x;
}

// Blur kernels 1/3/5/7 (Gaussian and average) and rotations 45/90/135/180.
inline std::vector<Transform> standard_battery() {
  std::vector<Transform> b;
  for (std::size_t k : {1, 3, 5, 7}) b.push_back(Transform::gaussian(k));
  for (std::size_t k : {1, 3, 5, 7}) b.push_back(Transform::average(k));
  for (double a : {45.0, 90.0, 135.0, 180.0}) b.push_back(Transform::rotation(a));
  return b;
}

// ---------------------------------------------------------------------------
// Reports

struct ImageMetrics {
  double l2_out = 0.0;
  double l1_out = 0.0;
  double psnr_in = 0.0;  // +inf when x_adv == x
  double ssim_in = 0.0;
  double lf_in = 0.0;
  bool defense_success = false;

  bool operator==(const ImageMetrics&) const = default;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  std::size_t n_images = 0;
  double dsr = 0.0;
  double mean_l2_out = 0.0;
  double mean_l1_out = 0.0;
  double mean_psnr_in = 0.0;  // mean over finite values; +inf when all are infinite
  std::size_t n_psnr_inf = 0;
  double mean_ssim_in = 0.0;
  double mean_lf_in = 0.0;  // equals lf_metric over the evaluated pairs

  static constexpr const char* kPixelScaleNote =
      "l2_out/l1_out: output range rescaled to unit width, success iff l2_out > 0.05; "
      "psnr_in/ssim_in: input pixel range; lf_in: sum of squared low-frequency differences on "
      "a 0-255 scale";

  bool operator==(const MetricsReport&) const = default;
};

inline MetricsReport aggregate(std::vector<ImageMetrics> images) {
  if (images.empty()) throw InvalidInput("aggregate: no images");
  MetricsReport r;
  r.n_images = images.size();
  const double n = static_cast<double>(images.size());
  std::size_t hits = 0, finite = 0;
  double psnr_sum = 0.0;
  for (const auto& m : images) {
    hits += m.defense_success;
    r.mean_l2_out += m.l2_out;
    r.mean_l1_out += m.l1_out;
    r.mean_ssim_in += m.ssim_in;
    r.mean_lf_in += m.lf_in;
    if (std::isfinite(m.psnr_in)) {
      psnr_sum += m.psnr_in;
      ++finite;
    } else {
      ++r.n_psnr_inf;
    }
  }
  r.dsr = static_cast<double>(hits) / n;
  r.mean_l2_out /= n;
  r.mean_l1_out /= n;
  r.mean_ssim_in /= n;
  r.mean_lf_in /= n;
  r.mean_psnr_in =
      finite == 0 ? std::numeric_limits<double>::infinity() : psnr_sum / static_cast<double>(finite);
  r.images = std::move(images);
  return r;
}

// Input-side metrics of (x, x_adv) and output-side metrics of
// (M(x), M(x_eval)). x_eval is x_adv itself or a transformed copy of it.
inline ImageMetrics measure_pair(const ManipulationModel& model, const ImageTensor& x,
                                 const ImageTensor& x_adv, const ImageTensor& clean_out,
                                 const ImageTensor& x_eval) {
  ImageMetrics m;
  ImageTensor adv_out;
  try {
    adv_out = model.forward(x_eval);
  } catch (const ShapeError&) {
    throw;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ModelError(std::string("model forward failed: ") + e.what());
  }
  const double width = model.output_range().width();
  m.l2_out = l2_output_distance(clean_out, adv_out, width);
  m.l1_out = l1_output_distance(clean_out, adv_out, width);
  m.defense_success = defense_success(m.l2_out);
  m.psnr_in = psnr(x, x_adv);
  m.ssim_in = ssim_index(x, x_adv);
  m.lf_in = lf_distance(x, x_adv);
  return m;
}

inline MetricsReport evaluate(const ManipulationModel& model, const std::vector<ImagePair>& pairs) {
  if (pairs.empty()) throw InvalidInput("evaluate: empty list");
  std::vector<ImageMetrics> out;
  out.reserve(pairs.size());
  for (const auto& [x, x_adv] : pairs) {
    out.push_back(measure_pair(model, x, x_adv, model.forward(x), x_adv));
  }
  return aggregate(std::move(out));
}

struct RobustnessResult {
  Transform transform;
  MetricsReport report;
};

// The transform is applied to the adversarial image before manipulation and
// compared against the manipulation of the untouched original.
inline std::vector<RobustnessResult> evaluate_robustness(const ManipulationModel& model,
                                                         const std::vector<ImagePair>& pairs,
                                                         const std::vector<Transform>& battery) {
  if (pairs.empty()) throw InvalidInput("evaluate_robustness: empty list");
  std::vector<ImageTensor> clean;
  clean.reserve(pairs.size());
  for (const auto& p : pairs) clean.push_back(model.forward(p.first));
  std::vector<RobustnessResult> results;
  for (const Transform& t : battery) {
    std::vector<ImageMetrics> per;
    per.reserve(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [x, x_adv] = pairs[i];
      per.push_back(measure_pair(model, x, x_adv, clean[i], robustness_transform(x_adv, t)));
    }
    results.push_back({t, aggregate(std::move(per))});
  }
  return results;
}

}  // namespace grasp
