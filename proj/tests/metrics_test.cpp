#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "grasp/metrics.hpp"
#include "test_support.hpp"

namespace grasp {
namespace {

using testing::random_image;

// A 100-pixel output pair with `hundredths` unit differences, so the
// unit-scale l2 distance is the correctly rounded hundredths / 100.
ImagePair pair_at(int hundredths) {
  ImageTensor y({10, 10, 1}), y_adv({10, 10, 1});
  for (int i = 0; i < hundredths; ++i) y_adv[static_cast<std::size_t>(i)] = 1.0;
  return {y, y_adv};
}

TEST(L2Output, IdenticalIsZero) {
  const ImageTensor y = random_image({4, 4, 3}, 1);
  EXPECT_EQ(l2_output_distance(y, y), 0.0);
}

TEST(L2Output, UniformDifference) {
  EXPECT_NEAR(l2_output_distance(ImageTensor({4, 4, 3}, 0.2), ImageTensor({4, 4, 3}, 0.5)), 0.09, 1e-15);
}

TEST(L2Output, RescalesByRangeWidth) {
  const PixelRange r{-1, 1};
  const ImageTensor a({2, 2, 1}, -0.3, r), b({2, 2, 1}, 0.3, r);
  EXPECT_NEAR(l2_output_distance(a, b), 0.09, 1e-15);
}

TEST(L2Output, ShapeMismatch) {
  EXPECT_THROW(l2_output_distance(ImageTensor({2, 2, 1}), ImageTensor({2, 2, 3})), ShapeError);
}

TEST(DefenseSuccess, StrictThreshold) {
  EXPECT_TRUE(defense_success(0.06));
  EXPECT_FALSE(defense_success(0.05));
  EXPECT_FALSE(defense_success(0.04));
}

TEST(Dsr, IdenticalPairsScoreZero) {
  const ImageTensor y = random_image({4, 4, 1}, 2);
  EXPECT_EQ(dsr({{y, y}, {y, y}}), 0.0);
}

TEST(Dsr, LargeUniformDifferenceScoresOne) {
  const ImageTensor a({4, 4, 1}, 0.2), b({4, 4, 1}, 0.5);
  EXPECT_EQ(dsr({{a, b}, {b, a}}), 1.0);
}

TEST(Dsr, MixedListExcludesBoundary) {
  EXPECT_EQ(l2_output_distance(pair_at(5).first, pair_at(5).second), 0.05);
  EXPECT_EQ(dsr({pair_at(6), pair_at(4), pair_at(10), pair_at(5)}), 0.5);
}

TEST(Dsr, PermutationInvariantAndMeanOfIndicators) {
  std::vector<ImagePair> pairs;
  for (std::uint64_t s = 0; s < 12; ++s) {
    pairs.push_back({random_image({2, 2, 1}, s), random_image({2, 2, 1}, s + 50)});
  }
  double indicators = 0.0;
  for (const auto& [y, ya] : pairs) indicators += defense_success(l2_output_distance(y, ya));
  const double base = dsr(pairs);
  EXPECT_EQ(base, indicators / 12.0);
  std::reverse(pairs.begin(), pairs.end());
  EXPECT_EQ(dsr(pairs), base);
}

TEST(Dsr, EmptyListRejected) { EXPECT_THROW(dsr({}), InvalidInput); }

TEST(Psnr, MseOfOneHundredth) {
  EXPECT_NEAR(psnr(ImageTensor({2, 2, 1}, 0.5), ImageTensor({2, 2, 1}, 0.6)), 20.0, 1e-12);
}

TEST(Psnr, UniformFivePercent) {
  EXPECT_NEAR(psnr(ImageTensor({4, 4, 3}, 0.5), ImageTensor({4, 4, 3}, 0.55)), 10 * std::log10(1 / 0.0025), 1e-10);
  EXPECT_NEAR(psnr(ImageTensor({4, 4, 3}, 0.5), ImageTensor({4, 4, 3}, 0.55)), 26.0206, 1e-4);
}

TEST(Psnr, IdenticalIsInfinite) {
  const ImageTensor x = random_image({4, 4, 3}, 3);
  EXPECT_TRUE(std::isinf(psnr(x, x)));
}

TEST(Psnr, SymmetricAndStrictlyDecreasing) {
  const ImageTensor x = random_image({4, 4, 3}, 4);
  const ImageTensor y = random_image({4, 4, 3}, 5);
  EXPECT_EQ(psnr(x, y), psnr(y, x));
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.01, 0.02, 0.05, 0.1, 0.2}) {
    const double p = psnr(ImageTensor({4, 4, 1}, 0.3), ImageTensor({4, 4, 1}, 0.3 + d));
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(LfMetric, IdenticalPairsZero) {
  const ImageTensor x = random_image({4, 4, 3}, 6);
  EXPECT_EQ(lf_metric({{x, x}}), 0.0);
}

TEST(LfMetric, OneGrayLevelOnTinyImage) {
  EXPECT_NEAR(lf_metric({{ImageTensor({2, 2, 1}, 0.0), ImageTensor({2, 2, 1}, 1.0 / 255.0)}}), 4.0, 1e-12);
}

TEST(LfMetric, DuplicatingPairsKeepsMean) {
  const ImagePair p{random_image({4, 4, 3}, 7), random_image({4, 4, 3}, 8)};
  const ImagePair q{random_image({4, 4, 3}, 9), random_image({4, 4, 3}, 10)};
  EXPECT_NEAR(lf_metric({p, q}), lf_metric({p, q, p, q}), 1e-9);
}

TEST(LfMetric, Symmetric) {
  const ImageTensor x = random_image({4, 4, 3}, 11), y = random_image({4, 4, 3}, 12);
  EXPECT_EQ(lf_metric({{x, y}}), lf_metric({{y, x}}));
}

TEST(LfMetric, OddDimensionsRejected) {
  EXPECT_THROW(lf_metric({{ImageTensor({3, 4, 1}), ImageTensor({3, 4, 1})}}), ShapeError);
}

TEST(Transforms, GaussianKernelOneIsIdentity) {
  const ImageTensor x = random_image({8, 8, 3}, 13);
  EXPECT_EQ(robustness_transform(x, Transform::gaussian(1)), x);
}

TEST(Transforms, Rotate180TwiceIsIdentity) {
  const ImageTensor x = random_image({6, 10, 3}, 14);
  const Transform t = Transform::rotation(180);
  EXPECT_EQ(robustness_transform(robustness_transform(x, t), t), x);
}

TEST(Transforms, QuarterTurnsOnSquareImagesArePermutations) {
  const ImageTensor x = random_image({6, 6, 1}, 15);
  ImageTensor r = x;
  for (int i = 0; i < 4; ++i) r = rotate(r, 90);
  EXPECT_EQ(r, x);
  const ImageTensor q = rotate(x, 90);
  // Counter-clockwise as displayed: the top-right corner moves to the top-left.
  EXPECT_EQ(q.at(0, 0, 0), x.at(0, 5, 0));
}

TEST(Transforms, DiagonalRotationFillsCornersWithZero) {
  const ImageTensor x({8, 8, 1}, 1.0);
  const ImageTensor r = rotate(x, 45);
  EXPECT_EQ(r.at(0, 0, 0), 0.0);
  EXPECT_NEAR(r.at(4, 4, 0), 1.0, 1e-12);
}

TEST(Transforms, AverageBlurOfImpulse) {
  ImageTensor x({7, 7, 1});
  x.at(3, 3, 0) = 1.0;
  const ImageTensor b = robustness_transform(x, Transform::average(3));
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t c = 0; c < 7; ++c) {
      const bool inside = y >= 2 && y <= 4 && c >= 2 && c <= 4;
      EXPECT_NEAR(b.at(y, c, 0), inside ? 1.0 / 9.0 : 0.0, 1e-15);
    }
}

TEST(Transforms, EvenKernelRejected) {
  EXPECT_THROW(robustness_transform(ImageTensor({4, 4, 1}), Transform{Transform::Kind::GaussianBlur, 2}),
               InvalidInput);
  EXPECT_THROW(robustness_transform(ImageTensor({4, 4, 1}), Transform{Transform::Kind::AverageBlur, 4}),
               InvalidInput);
}

TEST(Transforms, LabelsRoundTrip) {
  for (const Transform& t : standard_battery()) {
    const Transform p = Transform::parse(t.label());
    EXPECT_EQ(p.kind, t.kind);
    EXPECT_EQ(p.param, t.param);
  }
  EXPECT_EQ(Transform::rotation(135).label(), "rotate:135");
  EXPECT_THROW(Transform::parse("gaussian_blur:4"), ConfigError);
  EXPECT_THROW(Transform::parse("sharpen:3"), ConfigError);
}

TEST(Transforms, StandardBatteryContents) {
  std::vector<std::string> labels;
  for (const auto& t : standard_battery()) labels.push_back(t.label());
  EXPECT_EQ(labels, (std::vector<std::string>{"gaussian_blur:1", "gaussian_blur:3", "gaussian_blur:5",
                                              "gaussian_blur:7", "average_blur:1", "average_blur:3",
                                              "average_blur:5", "average_blur:7", "rotate:45", "rotate:90",
                                              "rotate:135", "rotate:180"}));
}

std::vector<ImagePair> adversarial_like_pairs(Shape s, std::size_t n, double amplitude) {
  std::vector<ImagePair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const ImageTensor x = random_image(s, 100 + i, 0.2, 0.8);
    pairs.push_back({x, x + random_image(s, 200 + i, -amplitude, amplitude)});
  }
  return pairs;
}

TEST(Robustness, IdentityTransformsMatchBaseline) {
  const IdentityModel m({8, 8, 3});
  const auto pairs = adversarial_like_pairs({8, 8, 3}, 4, 0.4);
  const MetricsReport base = evaluate(m, pairs);
  const auto res = evaluate_robustness(m, pairs, {Transform::gaussian(1), Transform::average(1),
                                                  Transform::rotation(0)});
  for (const auto& r : res) EXPECT_EQ(r.report, base) << r.transform.label();
}

// M(x) is compared with M(rotate(x_adv)); pairs that are themselves
// 180-degree symmetric make the rotation invisible to the identity model.
TEST(Robustness, HalfTurnOnSymmetricPairsKeepsDsr) {
  const IdentityModel m({8, 8, 1});
  std::vector<ImagePair> pairs;
  for (std::uint64_t s = 0; s < 4; ++s) {
    ImageTensor x = random_image({8, 8, 1}, s), xa = random_image({8, 8, 1}, s + 10);
    x = scale(x + rotate(x, 180), 0.5);
    xa = scale(xa + rotate(xa, 180), 0.5);
    pairs.push_back({x, xa});
  }
  const double base = evaluate(m, pairs).dsr;
  EXPECT_EQ(evaluate_robustness(m, pairs, {Transform::rotation(180)}).front().report.dsr, base);
}

TEST(Reports, AggregateHandlesInfinitePsnr) {
  ImageMetrics a, b;
  a.psnr_in = std::numeric_limits<double>::infinity();
  b.psnr_in = 30.0;
  b.defense_success = true;
  const MetricsReport r = aggregate({a, b});
  EXPECT_EQ(r.mean_psnr_in, 30.0);
  EXPECT_EQ(r.n_psnr_inf, 1u);
  EXPECT_EQ(r.dsr, 0.5);
  EXPECT_TRUE(std::isinf(aggregate({a}).mean_psnr_in));
  EXPECT_THROW(aggregate({}), InvalidInput);
}

TEST(Reports, LfMeanMatchesLfMetric) {
  const IdentityModel m({8, 8, 3});
  const auto pairs = adversarial_like_pairs({8, 8, 3}, 3, 0.05);
  EXPECT_NEAR(evaluate(m, pairs).mean_lf_in, lf_metric(pairs), 1e-9);
}

}  // namespace
}  // namespace grasp
