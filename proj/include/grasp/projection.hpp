#pragma once

// Conflict-aware combination of the three normalized loss gradients.
//
// A pair (a, b) is treated as conflicting when <a, b> <= 0. Conflicting pairs
// are mutually projected onto each other's normal planes before weighting;
// non-conflicting pairs are simply weighted and summed. Three pairs are formed
// (mse/ssim, ssim/lf, mse/lf) and blended into one update direction.

#include <array>
#include <cmath>
#include <cstddef>

#include "grasp/error.hpp"
#include "grasp/image.hpp"

namespace grasp {

struct ProjectionConfig {
  double lambda1 = 10.0, mu1 = 1.0;
  double lambda2 = 5.0, mu2 = 1.0;
  double lambda3 = 1.0, mu3 = 1.0;
  double eta1 = 11.0, eta2 = 3.0, eta3 = 19.0;
  double xi = 1e-12;
  // When false every pair takes the plain weighted-sum branch.
  bool enabled = true;

  void validate() const {
    for (double v : {lambda1, mu1, lambda2, mu2, lambda3, mu3, eta1, eta2, eta3, xi}) {
      if (!std::isfinite(v)) throw ConfigError("projection weights must be finite");
    }
    if (!(xi > 0.0)) throw ConfigError("projection.xi must be positive");
  }
};

struct GradientBundle {
  ImageTensor g, h, z;
  ImageTensor gs1, gs2, gs3;
  ImageTensor g_total;
  std::array<bool, 3> conflict_flags{false, false, false};
  // Projections onto a zero vector that were skipped.
  std::size_t degenerate_projections = 0;
};

inline ImageTensor normalize_l1(const ImageTensor& grad, double xi) {
  if (!(xi > 0.0)) throw InvalidInput("normalize_l1: xi must be positive");
  if (grad.empty()) return grad;
  return scale(grad, 1.0 / (norm(grad, NormKind::L1Sum) + xi));
}

// a - (<a,b> / <b,b>) b. A zero b leaves a unchanged and bumps `degenerate`.
inline ImageTensor project_onto_normal_plane(const ImageTensor& a, const ImageTensor& b,
                                             std::size_t* degenerate = nullptr) {
  require_same_shape(a, b, "project_onto_normal_plane");
  const double bb = dot(b, b);
  if (bb == 0.0) {
    if (degenerate) ++*degenerate;
    return a;
  }
  return axpy(a, -dot(a, b) / bb, b);
}

inline ImageTensor combine_plain(const ImageTensor& a, const ImageTensor& b, double lambda,
                                 double mu) {
  require_same_shape(a, b, "combine_pair");
  ImageTensor out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + mu * b[i];
  return out;
}

inline ImageTensor combine_conflicting(const ImageTensor& a, const ImageTensor& b, double lambda,
                                       double mu, std::size_t* degenerate = nullptr) {
  return combine_plain(project_onto_normal_plane(a, b, degenerate),
                       project_onto_normal_plane(b, a, degenerate), lambda, mu);
}

inline ImageTensor combine_pair(const ImageTensor& a, const ImageTensor& b, double lambda,
                                double mu, bool* conflict = nullptr,
                                std::size_t* degenerate = nullptr) {
  require_same_shape(a, b, "combine_pair");
  const bool conflicting = dot(a, b) <= 0.0;
  if (conflict) *conflict = conflicting;
  return conflicting ? combine_conflicting(a, b, lambda, mu, degenerate)
                     : combine_plain(a, b, lambda, mu);
}

inline GradientBundle total_gradient(const ImageTensor& g, const ImageTensor& h,
                                     const ImageTensor& z, const ProjectionConfig& cfg) {
  require_same_shape(g, h, "total_gradient");
  require_same_shape(g, z, "total_gradient");
  GradientBundle out;
  out.g = g;
  out.h = h;
  out.z = z;
  if (cfg.enabled) {
    bool f0 = false, f1 = false, f2 = false;
    out.gs1 = combine_pair(g, h, cfg.lambda1, cfg.mu1, &f0, &out.degenerate_projections);
    out.gs2 = combine_pair(h, z, cfg.lambda2, cfg.mu2, &f1, &out.degenerate_projections);
    out.gs3 = combine_pair(g, z, cfg.lambda3, cfg.mu3, &f2, &out.degenerate_projections);
    out.conflict_flags = {f0, f1, f2};
  } else {
    out.gs1 = combine_plain(g, h, cfg.lambda1, cfg.mu1);
    out.gs2 = combine_plain(h, z, cfg.lambda2, cfg.mu2);
    out.gs3 = combine_plain(g, z, cfg.lambda3, cfg.mu3);
    out.conflict_flags = {dot(g, h) <= 0.0, dot(h, z) <= 0.0, dot(g, z) <= 0.0};
  }
  out.g_total = g.zeros_like();
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.g_total[i] = cfg.eta1 * out.gs1[i] + cfg.eta2 * out.gs2[i] + cfg.eta3 * out.gs3[i];
  }
  return out;
}

}  // namespace grasp
