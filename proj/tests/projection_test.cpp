#include <gtest/gtest.h>

#include <cmath>

#include "grasp/losses.hpp"
#include "grasp/projection.hpp"
#include "test_support.hpp"

namespace grasp {
namespace {

using testing::from_values;
using testing::random_image;

ImageTensor vec2(double a, double b) { return from_values({1, 2, 1}, {a, b}); }

void expect_vec2(const ImageTensor& v, double a, double b) {
  EXPECT_NEAR(v[0], a, 1e-12);
  EXPECT_NEAR(v[1], b, 1e-12);
}

TEST(NormalizeL1, HandExample) { expect_vec2(normalize_l1(vec2(3, -1), 1e-12), 0.75, -0.25); }

TEST(NormalizeL1, ZeroStaysZero) {
  const ImageTensor z({3, 3, 3});
  EXPECT_EQ(normalize_l1(z, 1e-12), z);
}

TEST(NormalizeL1, NearlyIdempotentAndBounded) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const ImageTensor v = random_image({5, 5, 3}, s, -1, 1);
    const ImageTensor once = normalize_l1(v, 1e-12);
    EXPECT_LE(norm(once, NormKind::L1Sum), 1.0 + 1e-9);
    EXPECT_LE(relative_error(normalize_l1(once, 1e-12), once), 1e-11);
  }
}

TEST(NormalizeL1, RejectsNonPositiveXi) { EXPECT_THROW(normalize_l1(vec2(1, 1), 0.0), InvalidInput); }

TEST(Projection, HandExample) { expect_vec2(project_onto_normal_plane(vec2(1, 0), vec2(-1, 1)), 0.5, 0.5); }

TEST(Projection, OrthogonalInputUnchanged) {
  const ImageTensor a = vec2(1, 0);
  EXPECT_EQ(project_onto_normal_plane(a, vec2(0, 3)), a);
}

TEST(Projection, SelfProjectionCancels) { expect_vec2(project_onto_normal_plane(vec2(2, -3), vec2(2, -3)), 0, 0); }

TEST(Projection, ZeroDirectionIsCountedAndSkipped) {
  std::size_t degenerate = 0;
  const ImageTensor a = vec2(1, 2);
  EXPECT_EQ(project_onto_normal_plane(a, vec2(0, 0), &degenerate), a);
  EXPECT_EQ(degenerate, 1u);
}

TEST(Projection, ResultIsOrthogonal) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const ImageTensor a = random_image({4, 4, 3}, s, -1, 1);
    const ImageTensor b = random_image({4, 4, 3}, s + 500, -1, 1);
    const ImageTensor p = project_onto_normal_plane(a, b);
    EXPECT_LE(std::abs(dot(p, b)), 1e-8 * std::sqrt(dot(a, a) * dot(b, b)));
  }
}

TEST(CombinePair, ConflictingHandExample) {
  bool conflict = false;
  expect_vec2(combine_pair(vec2(1, 0), vec2(-1, 1), 1, 1, &conflict), 0.5, 1.5);
  EXPECT_TRUE(conflict);
}

TEST(CombinePair, AgreeingPairIsPlainWeightedSum) {
  bool conflict = true;
  expect_vec2(combine_pair(vec2(1, 0), vec2(1, 1), 2, 3, &conflict), 5, 3);
  EXPECT_FALSE(conflict);
}

TEST(CombinePair, ZeroDotTakesProjectionBranchWithSameResult) {
  bool conflict = false;
  expect_vec2(combine_pair(vec2(1, 0), vec2(0, 1), 1, 1, &conflict), 1, 1);
  EXPECT_TRUE(conflict);
}

TEST(CombinePair, RejectsShapeMismatch) {
  EXPECT_THROW(combine_pair(ImageTensor({1, 2, 1}), ImageTensor({2, 1, 1}), 1, 1), ShapeError);
}

TEST(CombinePair, PositivelyHomogeneous) {
  Rng rng(3);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const ImageTensor a = random_image({3, 3, 3}, s, -1, 1);
    const ImageTensor b = random_image({3, 3, 3}, s + 300, -1, 1);
    const double k = rng.uniform(0.1, 10.0);
    const ImageTensor lhs = combine_pair(scale(a, k), scale(b, k), 2.0, 0.5);
    const ImageTensor rhs = scale(combine_pair(a, b, 2.0, 0.5), k);
    EXPECT_LE(relative_error(lhs, rhs), 1e-12);
  }
}

TEST(TotalGradient, EqualDirectionsWithDefaultsGive177) {
  const ImageTensor u = random_image({4, 4, 3}, 9, 0.1, 1.0);
  const GradientBundle b = total_gradient(u, u, u, ProjectionConfig{});
  EXPECT_EQ(b.conflict_flags, (std::array<bool, 3>{false, false, false}));
  // g: 11*10 + 19*1 = 129, h: 11*1 + 3*5 = 26, z: 3*1 + 19*1 = 22
  for (std::size_t i = 0; i < u.size(); ++i) EXPECT_NEAR(b.g_total[i], 177.0 * u[i], 1e-12);
}

TEST(TotalGradient, OrthogonalDirectionsWithUnitWeights) {
  ProjectionConfig cfg;
  cfg.lambda1 = cfg.lambda2 = cfg.lambda3 = cfg.mu1 = cfg.mu2 = cfg.mu3 = 1.0;
  cfg.eta1 = cfg.eta2 = cfg.eta3 = 1.0;
  const ImageTensor g = from_values({1, 3, 1}, {1, 0, 0});
  const ImageTensor h = from_values({1, 3, 1}, {0, 1, 0});
  const ImageTensor z = from_values({1, 3, 1}, {0, 0, 1});
  const GradientBundle b = total_gradient(g, h, z, cfg);
  EXPECT_EQ(b.g_total, from_values({1, 3, 1}, {2, 2, 2}));
  EXPECT_EQ(b.conflict_flags, (std::array<bool, 3>{true, true, true}));
}

TEST(TotalGradient, AgreeingPairsSkipProjection) {
  ProjectionConfig cfg;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ImageTensor g = random_image({4, 4, 1}, s, 0.0, 1.0);
    const ImageTensor h = random_image({4, 4, 1}, s + 40, 0.0, 1.0);
    const ImageTensor z = random_image({4, 4, 1}, s + 80, 0.0, 1.0);
    const GradientBundle b = total_gradient(g, h, z, cfg);
    ImageTensor expect = g.zeros_like();
    for (std::size_t i = 0; i < g.size(); ++i) {
      expect[i] = cfg.eta1 * (cfg.lambda1 * g[i] + cfg.mu1 * h[i]) +
                  cfg.eta2 * (cfg.lambda2 * h[i] + cfg.mu2 * z[i]) +
                  cfg.eta3 * (cfg.lambda3 * g[i] + cfg.mu3 * z[i]);
    }
    EXPECT_EQ(b.g_total, expect);
  }
}

TEST(TotalGradient, DisabledProjectionStillRecordsConflicts) {
  ProjectionConfig cfg;
  cfg.enabled = false;
  const GradientBundle b = total_gradient(vec2(1, 0), vec2(-1, 1), vec2(0, 1), cfg);
  EXPECT_EQ(b.conflict_flags, (std::array<bool, 3>{true, false, true}));
  const ImageTensor plain = combine_plain(vec2(1, 0), vec2(-1, 1), cfg.lambda1, cfg.mu1);
  EXPECT_EQ(b.gs1, plain);
}

TEST(TotalGradient, Deterministic) {
  const ImageTensor g = random_image({8, 8, 3}, 1, -1, 1);
  const ImageTensor h = random_image({8, 8, 3}, 2, -1, 1);
  const ImageTensor z = random_image({8, 8, 3}, 3, -1, 1);
  EXPECT_EQ(total_gradient(g, h, z, {}).g_total, total_gradient(g, h, z, {}).g_total);
}

TEST(ProjectionConfig, Validation) {
  ProjectionConfig cfg;
  cfg.xi = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ProjectionConfig{};
  cfg.eta2 = std::nan("");
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace grasp
