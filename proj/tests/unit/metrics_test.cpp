#include <gtest/gtest.h>

#include "promptseg/metrics.hpp"
#include "support.hpp"

namespace promptseg {
namespace {

using testing::Rng;

SoftMask soft2x2(int bits) {
  SoftMask m(2, 2);
  for (int i = 0; i < 4; ++i) m.values()[static_cast<std::size_t>(i)] = (bits >> i) & 1;
  return m;
}

BinaryMask bin2x2(int bits) {
  BinaryMask m(2, 2);
  for (int i = 0; i < 4; ++i) m.values()[static_cast<std::size_t>(i)] = (bits >> i) & 1;
  return m;
}

BinaryMask invert(const BinaryMask& m) {
  BinaryMask out(m.size());
  for (std::size_t i = 0; i < m.pixel_count(); ++i) out.values()[i] = !m.values()[i];
  return out;
}

template <typename M>
M transpose(const M& m) {
  M out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.at(y, x) = m.at(x, y);
  return out;
}

/// Per-pixel E-measure straight from the bias-map definition.
double emeasure_reference(const SoftMask& pred, const BinaryMask& gt) {
  const double n = static_cast<double>(pred.pixel_count());
  double gt_mean = 0.0;
  for (auto v : gt.values()) gt_mean += v;
  gt_mean /= n;
  double total = 0.0;
  for (int k = 0; k <= 255; ++k) {
    const double t = k / 255.0;
    std::vector<double> fm;
    double fm_mean = 0.0;
    for (double p : pred.values()) {
      fm.push_back(p >= t && p > 0.0 ? 1.0 : 0.0);
      fm_mean += fm.back();
    }
    fm_mean /= n;
    double e = 0.0;
    if (gt_mean == 0.0) {
      e = 1.0 - fm_mean;
    } else if (gt_mean == 1.0) {
      e = fm_mean;
    } else {
      for (std::size_t i = 0; i < fm.size(); ++i) {
        const double a = fm[i] - fm_mean;
        const double b = gt.values()[i] - gt_mean;
        const double xi = 2.0 * a * b / (a * a + b * b + 1e-12);
        e += (1.0 + xi) * (1.0 + xi) / 4.0;
      }
      e /= n;
    }
    total += e;
  }
  return total / 256.0;
}

TEST(Mae, Examples) {
  Rng rng(51);
  const BinaryMask gt = testing::random_binary(rng, 7, 5);
  EXPECT_EQ(mae(to_soft(gt), gt), 0.0);
  EXPECT_EQ(mae(to_soft(invert(gt)), gt), 1.0);
  EXPECT_DOUBLE_EQ(mae(SoftMask(7, 5, 0.5), gt), 0.5);
  EXPECT_THROW(mae(SoftMask(5, 7), gt), Error);
}

TEST(AdaptiveF, Examples) {
  BinaryMask gt(2, 2);
  gt.set(0, 0);
  SoftMask pred(2, 2);
  pred.at(0, 0) = 1.0;
  pred.at(1, 0) = 1.0;
  EXPECT_NEAR(adaptive_fmeasure(pred, gt), 0.65 / 1.15, 1e-12);
  EXPECT_NEAR(adaptive_fmeasure(pred, gt), 0.5652, 1e-4);
  EXPECT_EQ(adaptive_fmeasure(to_soft(gt), gt), 1.0);
  EXPECT_EQ(adaptive_fmeasure(SoftMask(2, 2), gt), 0.0);
  EXPECT_THROW(adaptive_fmeasure(SoftMask(3, 2), gt), Error);
}

TEST(AdaptiveF, SoftThreshold) {
  // mean 0.25 -> threshold 0.5: only the two pixels >= 0.5 count.
  SoftMask pred(4, 1);
  pred.at(0, 0) = 0.5;
  pred.at(1, 0) = 0.49;
  pred.at(2, 0) = 0.01;
  pred.at(3, 0) = 0.0;
  BinaryMask gt(4, 1);
  gt.set(0, 0);
  gt.set(1, 0);
  // TP=1, FP=0, FN=1: P=1, R=0.5.
  EXPECT_NEAR(adaptive_fmeasure(pred, gt), 1.3 * 0.5 / (0.3 + 0.5), 1e-12);
}

TEST(MetricOracles, AllTwoByTwoBinaryPairs) {
  for (int p = 0; p < 16; ++p) {
    for (int g = 0; g < 16; ++g) {
      int tp = 0, fp = 0, fn = 0, diff = 0;
      for (int i = 0; i < 4; ++i) {
        const bool pb = (p >> i) & 1, gb = (g >> i) & 1;
        tp += pb && gb;
        fp += pb && !gb;
        fn += !pb && gb;
        diff += pb != gb;
      }
      const double precision = tp + fp ? double(tp) / (tp + fp) : 0.0;
      const double recall = tp + fn ? double(tp) / (tp + fn) : 0.0;
      const double f = precision + recall > 0 ? 1.3 * precision * recall / (0.3 * precision + recall) : 0.0;
      ASSERT_EQ(mae(soft2x2(p), bin2x2(g)), diff / 4.0) << p << "," << g;
      ASSERT_EQ(adaptive_fmeasure(soft2x2(p), bin2x2(g)), f) << p << "," << g;
    }
  }
}

TEST(EMeasure, SpecialCases) {
  EXPECT_EQ(mean_emeasure(SoftMask(4, 4), BinaryMask(4, 4)), 1.0);
  EXPECT_EQ(mean_emeasure(SoftMask(4, 4, 1.0), BinaryMask(4, 4)), 0.0);
  EXPECT_EQ(mean_emeasure(SoftMask(4, 4, 1.0), BinaryMask(4, 4, true)), 1.0);
  EXPECT_EQ(mean_emeasure(SoftMask(4, 4), BinaryMask(4, 4, true)), 0.0);
  EXPECT_THROW(mean_emeasure(SoftMask(4, 4), BinaryMask(4, 4), 0), Error);
}

TEST(EMeasure, PerfectBinaryPrediction) {
  Rng rng(52);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask gt = testing::random_binary(rng, testing::uniform_int(rng, 1, 20), testing::uniform_int(rng, 1, 20));
    EXPECT_NEAR(mean_emeasure(to_soft(gt), gt), 1.0, 1e-6);
  }
}

TEST(EMeasure, MatchesPerPixelDefinition) {
  Rng rng(53);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = testing::uniform_int(rng, 1, 12), h = testing::uniform_int(rng, 1, 12);
    const SoftMask pred = trial % 2 ? testing::random_soft(rng, w, h) : testing::random_quantized(rng, w, h, 5);
    const BinaryMask gt = testing::random_binary(rng, w, h, testing::uniform(rng));
    ASSERT_NEAR(mean_emeasure(pred, gt), emeasure_reference(pred, gt), 1e-12) << "trial " << trial;
  }
}

TEST(EMeasure, StrideSubsamplesThresholds) {
  Rng rng(54);
  const SoftMask pred = testing::random_soft(rng, 9, 9);
  const BinaryMask gt = testing::random_binary(rng, 9, 9);
  double manual = 0.0;
  int count = 0;
  for (int k = 0; k <= 255; k += 5) {
    double a = 0, b = 0, c = 0, d = 0;
    for (std::size_t i = 0; i < pred.pixel_count(); ++i) {
      const bool f = pred.values()[i] >= k / 255.0 && pred.values()[i] > 0;
      const bool g = gt.values()[i];
      (f && g ? a : f ? b : g ? c : d) += 1;
    }
    manual += emeasure_from_counts(a, b, c, d);
    ++count;
  }
  EXPECT_NEAR(mean_emeasure(pred, gt, 5), manual / count, 1e-12);
}

TEST(EMeasure, TranspositionInvariant) {
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    const int w = testing::uniform_int(rng, 1, 16), h = testing::uniform_int(rng, 1, 16);
    const SoftMask pred = testing::random_soft(rng, w, h);
    const BinaryMask gt = testing::random_binary(rng, w, h);
    ASSERT_NEAR(mean_emeasure(pred, gt), mean_emeasure(transpose(pred), transpose(gt)), 1e-12);
  }
}

TEST(SMeasure, SpecialCases) {
  EXPECT_EQ(smeasure(SoftMask(5, 5), BinaryMask(5, 5)), 1.0);
  EXPECT_EQ(smeasure(SoftMask(5, 5, 1.0), BinaryMask(5, 5)), 0.0);
  EXPECT_DOUBLE_EQ(smeasure(SoftMask(5, 5, 0.25), BinaryMask(5, 5, true)), 0.25);
  EXPECT_THROW(smeasure(SoftMask(5, 4), BinaryMask(5, 5)), Error);
}

TEST(SMeasure, PerfectMixedPrediction) {
  Rng rng(56);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask gt = testing::random_binary(rng, testing::uniform_int(rng, 2, 30), testing::uniform_int(rng, 2, 30));
    gt.set(0, 0, true);
    gt.set(1, 0, false);
    EXPECT_NEAR(smeasure(to_soft(gt), gt), 1.0, 1e-6);
  }
}

TEST(SMeasure, ObjectScoreUsesSampleDeviation) {
  // {0, 1}: mean 0.5, sample std sqrt(0.5).
  const double expected = 1.0 / (0.25 + 1.0 + std::sqrt(0.5) + 1e-12);
  EXPECT_NEAR(detail::object_score({0.0, 1.0}), expected, 1e-15);
  EXPECT_NEAR(detail::object_score({1.0}), 1.0, 1e-12);
  EXPECT_EQ(detail::object_score({}), 0.0);
}

TEST(SMeasure, HandComputedCase) {
  // gt has one foreground pixel at (0,0) in a 2x2; pred puts 0.5 there.
  BinaryMask gt(2, 2);
  gt.set(0, 0);
  SoftMask pred(2, 2);
  pred.at(0, 0) = 0.5;
  // Object: fg {0.5} -> 2*0.5/(0.25+1) = 0.8; bg {1,1,1} -> 1. Weighted by 0.25/0.75.
  const double object = 0.25 * 0.8 + 0.75 * 1.0;
  // Centroid (1,1) 1-based -> split after the first column and row; every block is
  // one pixel, has zero variance and therefore scores 1.
  const double region = 1.0;
  EXPECT_NEAR(smeasure(pred, gt), 0.5 * object + 0.5 * region, 1e-9);
}

TEST(MetricProperties, PerfectPredictions) {
  Rng rng(57);
  for (int trial = 0; trial < 100; ++trial) {
    const BinaryMask gt = testing::random_binary(rng, testing::uniform_int(rng, 1, 40), testing::uniform_int(rng, 1, 40),
                                                 testing::uniform(rng));
    const MetricValues v = evaluate_pair(to_soft(gt), gt);
    EXPECT_EQ(v.mae, 0.0);
    EXPECT_NEAR(v.e_phi, 1.0, 1e-6);
    EXPECT_NEAR(v.s_alpha, 1.0, 1e-6);
    if (gt.any()) {
      EXPECT_NEAR(v.f_beta, 1.0, 1e-6);
    }
  }
}

TEST(MetricProperties, FuzzStaysInUnitRange) {
  Rng rng(58);
  for (int trial = 0; trial < 300; ++trial) {
    const int w = testing::uniform_int(rng, 1, 64), h = testing::uniform_int(rng, 1, 64);
    const SoftMask pred = trial % 3 == 0 ? testing::random_quantized(rng, w, h) : testing::random_soft(rng, w, h);
    const BinaryMask gt = testing::random_binary(rng, w, h, testing::uniform(rng));
    const MetricValues v = evaluate_pair(pred, gt, 5);
    for (double m : {v.mae, v.f_beta, v.e_phi, v.s_alpha}) {
      ASSERT_TRUE(std::isfinite(m));
      ASSERT_GE(m, 0.0);
      ASSERT_LE(m, 1.0);
    }
  }
}

TEST(EvaluateDataset, Aggregation) {
  Rng rng(59);
  const BinaryMask gt = testing::random_binary(rng, 10, 10);
  const SoftMask pred = testing::random_soft(rng, 10, 10);
  const MetricReport one = evaluate_dataset({{"a", pred, gt}});
  EXPECT_EQ(one.count, 1u);
  EXPECT_EQ(one.aggregate.s_alpha, one.per_image.at("a").s_alpha);
  const MetricReport two = evaluate_dataset({{"a", pred, gt}, {"b", pred, gt}});
  EXPECT_NEAR(two.aggregate.e_phi, one.aggregate.e_phi, 1e-15);

  BinaryMask g(5, 1);
  SoftMask p(5, 1);
  p.at(0, 0) = 1.0;
  const MetricReport mean = evaluate_dataset({{"x", SoftMask(5, 1), g}, {"y", p, g}});
  EXPECT_NEAR(mean.aggregate.mae, 0.1, 1e-15);
  EXPECT_THROW(evaluate_dataset({}), Error);
  EXPECT_THROW(evaluate_dataset({{"a", pred, gt}, {"a", pred, gt}}), Error);
}

}  // namespace
}  // namespace promptseg
