#include <gtest/gtest.h>

#include <random>

#include "metric_oracles.hpp"
#include "tsft/metrics.hpp"

namespace tsft {
namespace {

using testing::brute_auprc;
using testing::brute_auroc;
using V = std::vector<double>;

Mat<double> col(const V& v) {
  Mat<double> m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return m;
}

TEST(Auroc, HandExample) {
  const V s{0.1, 0.4, 0.35, 0.8}, y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(brute_auroc(s, y), 0.75);
  EXPECT_DOUBLE_EQ(*metric_auroc(s, y), 0.75);
}

TEST(Auroc, SeparatedAndTied) {
  EXPECT_DOUBLE_EQ(*metric_auroc(V{0.1, 0.2, 0.8, 0.9}, V{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(*metric_auroc(V{0.3, 0.3, 0.3, 0.3}, V{0, 1, 0, 1}), 0.5);
}

TEST(Auroc, SingleClassIsAbsent) {
  EXPECT_FALSE(metric_auroc(V{0.1, 0.2}, V{1, 1}).has_value());
  EXPECT_FALSE(metric_auroc(V{0.1, 0.2}, V{0, 0}).has_value());
  EXPECT_THROW(metric_auroc(V{0.1}, V{0, 1}), std::invalid_argument);
}

TEST(Auprc, Examples) {
  EXPECT_DOUBLE_EQ(*metric_auprc(V{0.1, 0.2, 0.8, 0.9}, V{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(brute_auprc(V{0.9, 0.8, 0.7, 0.1}, V{0, 0, 0, 1}), 0.25);
  EXPECT_DOUBLE_EQ(*metric_auprc(V{0.9, 0.8, 0.7, 0.1}, V{0, 0, 0, 1}), 0.25);
  EXPECT_FALSE(metric_auprc(V{0.1, 0.2}, V{0, 0}).has_value());
}

TEST(Auprc, RandomScoresApproachPrevalence) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution b(0.3);
  V s(10000), y(10000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = b(rng);
  }
  EXPECT_NEAR(*metric_auprc(s, y), 0.3, 0.05);
}

TEST(RankingMetrics, MatchBruteForceWithTies) {
  std::mt19937_64 rng(4);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng() % 49;
    std::uniform_int_distribution<int> level(0, 1 + static_cast<int>(rng() % 10));  // few levels -> many ties
    V s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = level(rng) / 10.0;
      y[i] = static_cast<double>(rng() & 1);
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_NEAR(*metric_auroc(s, y), brute_auroc(s, y), 1e-12);
    EXPECT_NEAR(*metric_auprc(s, y), brute_auprc(s, y), 1e-12);
  }
}

TEST(F1, Examples) {
  EXPECT_NEAR(metric_f1_macro(col({1, 1, 0}), col({1, 0, 0})), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(metric_f1_macro(col({1, 0, 1}), col({1, 0, 1})), 1.0);
  EXPECT_EQ(metric_accuracy(col({1, 0, 1}), col({1, 0, 1})), 1.0);
  Mat<double> p(3, 2), l(3, 2);
  p << 1, 0, 0, 0, 1, 0;
  l << 1, 0, 0, 0, 1, 0;
  EXPECT_DOUBLE_EQ(metric_f1_macro(p, l), 0.5);  // second label never true nor predicted
}

TEST(Accuracy, ElementwiseMatchFraction) {
  Mat<double> p(2, 2), l(2, 2);
  p << 1, 0, 1, 1;
  l << 1, 1, 1, 0;
  EXPECT_DOUBLE_EQ(metric_accuracy(p, l), 0.5);
}

TEST(Threshold, HalfIsPositive) { EXPECT_EQ(threshold(col({0.49, 0.5, 0.9})), col({0, 1, 1})); }

TEST(Macro, RankingMetricsAveragePerLabel) {
  Mat<double> s(4, 2), y(4, 2);
  s << 0.1, 0.9, 0.4, 0.8, 0.35, 0.7, 0.8, 0.1;
  y << 0, 0, 0, 0, 1, 0, 1, 1;
  EXPECT_DOUBLE_EQ(*metric_auroc_macro(s, y), (0.75 + 0.0) / 2);
  Mat<double> single(4, 2);
  single << 0, 0, 0, 0, 1, 0, 1, 0;  // second label has no positives
  EXPECT_DOUBLE_EQ(*metric_auroc_macro(s, single), 0.75);
}

TEST(Regression, MseMae) {
  Mat<double> p(1, 2), t(1, 2);
  p << 0, 2;
  t << 0, 0;
  EXPECT_DOUBLE_EQ(metric_mse(p, t), 2.0);
  EXPECT_DOUBLE_EQ(metric_mae(p, t), 1.0);
  EXPECT_DOUBLE_EQ(metric_mse(t, t), 0.0);
}

TEST(Suites, KeysPerTask) {
  auto c = classification_metrics(col({0.2, 0.7, 0.6}), col({0, 1, 0}));
  for (const char* k : {"accuracy", "auroc", "auprc", "f1_macro"}) EXPECT_TRUE(c.count(k)) << k;
  auto f = forecast_metrics(col({1, 2}), col({1, 1}));
  EXPECT_TRUE(f.count("mse"));
  EXPECT_TRUE(f.count("mae"));
}

}  // namespace
}  // namespace tsft
