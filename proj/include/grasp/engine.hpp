#pragma once

// Iterative adversarial-image generation.
//
// Each iteration evaluates the output-MSE, SSIM and low-frequency terms at the
// current adversarial image, turns their gradients into l1-normalized
// directions (MSE and SSIM ascended, LF descended), merges them with the
// conflict-aware projection, takes a step of size kappa, clips back into the
// epsilon ball, smooths the perturbation and clips again.

#include <array>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "grasp/error.hpp"
#include "grasp/filters.hpp"
#include "grasp/image.hpp"
#include "grasp/losses.hpp"
#include "grasp/models.hpp"
#include "grasp/projection.hpp"
#include "grasp/random.hpp"

namespace grasp {

// Which supervision terms feed the update. Rows of an ablation study toggle
// these together with ProjectionConfig::enabled.
struct LossSelection {
  bool mse = true;
  bool ssim = true;
  bool lf = true;

  bool operator==(const LossSelection&) const = default;
};

struct DefenseConfig {
  double epsilon = 0.05;
  std::size_t iterations = 20;
  double kappa = 10.0;
  std::size_t smoothing_kernel = 11;
  ProjectionConfig projection{};
  SsimConfig ssim{};
  LossSelection losses{};
  // Seeds the direction used when the MSE gradient vanishes identically,
  // which always happens at the clean starting point.
  std::uint64_t start_seed = 1;

  void validate() const {
    if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be >= 0");
    if (!std::isfinite(kappa)) throw ConfigError("kappa must be finite");
    if (smoothing_kernel == 0 || smoothing_kernel % 2 == 0) {
      throw ConfigError("smoothing_kernel must be odd and positive");
    }
    projection.validate();
    ssim.validate();
  }
};

struct IterationRecord {
  double mse = 0.0;   // losses at the iterate the gradients were taken from
  double ssim = 0.0;
  double lf = 0.0;
  std::array<bool, 3> conflict_flags{false, false, false};
  bool random_direction = false;
  std::size_t degenerate_projections = 0;
  double linf = 0.0;  // ||x_adv - x||_inf after the iteration
};

struct DefenseTrace {
  std::vector<IterationRecord> records;
};

struct DefenseResult {
  ImageTensor x_adv;
  DefenseTrace trace;
};

// Thrown when the model fails mid-run; carries the iterations completed so far.
class DefenseFailure : public ModelError {
 public:
  DefenseFailure(const std::string& what, DefenseTrace partial)
      : ModelError(what), partial_(std::move(partial)) {}
  const DefenseTrace& partial_trace() const { return partial_; }

 private:
  DefenseTrace partial_;
};

inline ImageTensor gaussian_smooth_perturbation(const ImageTensor& eta, std::size_t kernel) {
  return gaussian_blur(eta, kernel);
}

inline DefenseResult generate_adversarial(const ManipulationModel& model, const ImageTensor& x,
                                          const DefenseConfig& cfg) {
  cfg.validate();
  if (x.shape() != model.input_dims()) {
    throw ShapeError("generate_adversarial: image " + x.shape().str() +
                     " does not match model input " + model.input_dims().str());
  }
  require_even_dims(x, "generate_adversarial");

  DefenseResult result{x, {}};
  result.trace.records.reserve(cfg.iterations);
  if (cfg.iterations == 0) return result;

  ImageTensor clean_out;
  try {
    clean_out = model.forward(x);
  } catch (const ShapeError&) {
    throw;
  } catch (const std::exception& e) {
    throw DefenseFailure(std::string("model forward failed on clean image: ") + e.what(), {});
  }

  Rng rng(cfg.start_seed);
  const double xi = cfg.projection.xi;
  ImageTensor& x_adv = result.x_adv;

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    IterationRecord rec;
    LossEval mse;
    try {
      mse = mse_output_loss_from_clean(model, clean_out, x_adv);
    } catch (const ShapeError&) {
      throw;
    } catch (const std::exception& e) {
      throw DefenseFailure(std::string("model failed at iteration ") + std::to_string(t) + ": " +
                               e.what(),
                           result.trace);
    }
    const LossEval ssim = ssim_loss(x, x_adv, cfg.ssim);
    const LossEval lf = lf_loss(x, x_adv);
    rec.mse = mse.value;
    rec.ssim = ssim.value;
    rec.lf = lf.value;

    ImageTensor g = x.zeros_like();
    if (cfg.losses.mse) {
      bool stationary = true;
      for (double v : mse.grad_wrt_adv.values()) {
        if (v != 0.0) {
          stationary = false;
          break;
        }
      }
      if (stationary && cfg.kappa != 0.0) {
        ImageTensor dir = x.zeros_like();
        for (double& v : dir.values()) v = rng.uniform(-1.0, 1.0);
        g = normalize_l1(dir, xi);
        rec.random_direction = true;
      } else {
        g = normalize_l1(mse.grad_wrt_adv, xi);
      }
    }
    const ImageTensor h = cfg.losses.ssim ? normalize_l1(ssim.grad_wrt_adv, xi) : x.zeros_like();
    const ImageTensor z =
        cfg.losses.lf ? scale(normalize_l1(lf.grad_wrt_adv, xi), -1.0) : x.zeros_like();

    const GradientBundle bundle = total_gradient(g, h, z, cfg.projection);
    rec.conflict_flags = bundle.conflict_flags;
    rec.degenerate_projections = bundle.degenerate_projections;

    const ImageTensor stepped = clip_to_ball(axpy(x_adv, cfg.kappa, bundle.g_total), x,
                                             cfg.epsilon);
    const ImageTensor eta = gaussian_smooth_perturbation(stepped - x, cfg.smoothing_kernel);
    x_adv = clip_to_ball(x + eta, x, cfg.epsilon);

    rec.linf = norm(x_adv - x, NormKind::LInf);
    result.trace.records.push_back(rec);
  }
  return result;
}

}  // namespace grasp
