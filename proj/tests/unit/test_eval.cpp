#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "vad/core/rng.hpp"
#include "vad/eval/ems.hpp"
#include "vad/eval/metrics.hpp"

using namespace vad;
using namespace vad::eval;

namespace {

// Direct transcription: for each position count ones in the clipped window, then
// run the recurrence literally.
std::vector<double> naive_ems(const std::vector<int>& x, std::size_t w, double d) {
  const long n = static_cast<long>(x.size()), h = static_cast<long>(w / 2);
  std::vector<int> v(x.size());
  for (long i = 0; i < n; ++i) {
    int ones = 0, total = 0;
    for (long j = i - h; j <= i + h; ++j) {
      if (j < 0 || j >= n) continue;
      ++total;
      ones += x[j] ? 1 : 0;
    }
    v[i] = ones * 2 > total;
  }
  std::vector<double> s(x.size());
  double prev = v.empty() ? 0 : v[0];
  for (long i = 0; i < n; ++i) {
    s[i] = i == 0 ? v[0] : d * prev + (1 - d) * v[i];
    prev = s[i];
  }
  return s;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!y[i] || y[j]) continue;
      pairs += 1;
      num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return num / pairs;
}

}  // namespace

TEST(Ems, MatchesNaiveOnAllShortSeries) {
  for (std::size_t n = 1; n <= 12; ++n)
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      std::vector<int> x(n);
      for (std::size_t i = 0; i < n; ++i) x[i] = (mask >> i) & 1u;
      for (std::size_t w : {1u, 3u, 5u}) {
        const auto got = ems_smooth(x, {w, 0.9});
        const auto want = naive_ems(x, w, 0.9);
        for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
      }
    }
}

TEST(Ems, MatchesNaiveOnRandomLongSeries) {
  Rng rng(17);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(13, 400));
    const double p = rng.uniform(0.05, 0.95);
    std::vector<int> x(n);
    for (auto& v : x) v = rng.bernoulli(p);
    const std::size_t w = 2 * static_cast<std::size_t>(rng.integer(0, 6)) + 1;
    const double d = rng.uniform(0.01, 0.99);
    const auto got = ems_smooth(x, {w, d});
    const auto want = naive_ems(x, w, d);
    for (std::size_t i = 0; i < n; ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Ems, VoteRemovesIsolatedSpikesAndKeepsRuns) {
  std::vector<int> x(40, 0);
  x[10] = 1;
  x[11] = 1;  // two-sample blip
  for (int i = 20; i < 30; ++i) x[i] = 1;
  x[25] = 0;  // one-sample dropout
  const auto v = majority_vote(x, 5);
  EXPECT_EQ(v[10], 0);
  EXPECT_EQ(v[11], 0);
  EXPECT_EQ(v[25], 1);
  for (int i = 21; i < 29; ++i) EXPECT_EQ(v[i], 1) << i;
}

TEST(Ems, TiesOnTruncatedEdgesGoToZero) {
  // Position 0 with w=5 sees {x0,x1,x2}; position 1 sees four samples.
  const std::vector<int> x{1, 1, 0, 0, 0, 0};
  const auto v = majority_vote(x, 5);
  EXPECT_EQ(v[0], 1);  // 2 of 3
  EXPECT_EQ(v[1], 0);  // 2 of 4 is a tie
}

TEST(Ems, StaysInUnitIntervalAndFirstValueIsVote) {
  Rng rng(3);
  std::vector<int> x(200);
  for (auto& v : x) v = rng.bernoulli(0.4);
  const auto s = ems_smooth(x);
  EXPECT_DOUBLE_EQ(s[0], majority_vote(x, 5)[0]);
  for (double v : s) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Ems, Locality) {
  // A change at t only affects outputs from t - w/2 on.
  Rng rng(5);
  std::vector<int> x(120);
  for (auto& v : x) v = rng.bernoulli(0.5);
  auto y = x;
  y[80] ^= 1;
  const auto a = ems_smooth(x), b = ems_smooth(y);
  for (std::size_t i = 0; i < 78; ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Ems, RejectsBadConfig) {
  EXPECT_THROW(ems_smooth(std::vector<int>{1, 0}, {4, 0.9}), ConfigError);
  EXPECT_THROW(ems_smooth(std::vector<int>{1, 0}, {5, 1.0}), ConfigError);
  EXPECT_THROW(ems_smooth(std::vector<int>{1, 0}, {5, 0.0}), ConfigError);
  EXPECT_THROW(ems_smooth(std::vector<int>{}, {}), ConfigError);
  EXPECT_THROW(json({{"vote_window", 2}}).get<EmsConfig>(), ConfigError);
}

TEST(Ems, PropagateForward) {
  const std::vector<int> x{0, 1, 0, 0, 0, 0, 1, 0};
  EXPECT_EQ(propagate_forward(x, 2), (std::vector<int>{0, 1, 1, 1, 0, 0, 1, 1}));
  EXPECT_EQ(propagate_forward(x, 0), x);
}

TEST(Auc, MatchesPairwiseOracle) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(2, 80));
    std::vector<double> s(n);
    std::vector<int> y(n);
    const bool coarse = rng.bernoulli(0.5);  // many ties
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.bernoulli(0.3);
      s[i] = coarse ? rng.integer(0, 4) / 4.0 : rng.uniform();
    }
    const auto a = roc_auc(s, y);
    const bool both = std::count(y.begin(), y.end(), 1) > 0 && std::count(y.begin(), y.end(), 0) > 0;
    ASSERT_EQ(a.has_value(), both);
    if (both) ASSERT_NEAR(*a, pairwise_auc(s, y), 1e-12);
  }
}

TEST(Auc, EdgeCases) {
  const std::vector<int> y{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(*roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 1.0);
  EXPECT_DOUBLE_EQ(*roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 0.0);
  EXPECT_DOUBLE_EQ(*roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
  EXPECT_THROW(roc_auc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeError);
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(2);
  std::vector<double> s(200), t(200);
  std::vector<int> y(200);
  for (std::size_t i = 0; i < s.size(); ++i) {
    y[i] = rng.bernoulli(0.4);
    s[i] = rng.uniform() + 0.3 * y[i];
    t[i] = std::exp(3 * s[i]) - 7;
  }
  EXPECT_DOUBLE_EQ(*roc_auc(s, y), *roc_auc(t, y));
}

TEST(Metrics, ConfusionCountsAndRatios) {
  const std::vector<double> s{0.9, 0.6, 0.4, 0.1, 0.5};
  const std::vector<int> y{1, 0, 1, 0, 1};
  const auto m = compute_metrics(s, y, 0.5);
  EXPECT_EQ(m.tp, 2u);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
  EXPECT_EQ(m.tn, 1u);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3);
  EXPECT_DOUBLE_EQ(m.f1, 2.0 / 3);
}

TEST(Metrics, UndefinedValuesSerialize) {
  const auto m = compute_metrics(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0});
  EXPECT_FALSE(m.auc.has_value());
  EXPECT_TRUE(std::isnan(m.precision));
  const json j = m;
  EXPECT_EQ(j["auc"], "undefined");
  EXPECT_TRUE(j["precision"].is_null());
  const auto back = j.get<MetricReport>();
  EXPECT_FALSE(back.auc.has_value());
  EXPECT_TRUE(std::isnan(back.recall));
  EXPECT_EQ(back.tn, 2u);
}

TEST(Metrics, PoolsSeries) {
  ScoreSeries a{"a", {0, 10}, {0, 1}, {0.1, 0.9}, {0, 1}};
  ScoreSeries b{"b", {0, 10}, {0, 0}, {0.2, 0.3}, {0, 0}};
  const std::vector<ScoreSeries> all{a, b};
  const auto m = compute_metrics(std::span<const ScoreSeries>(all));
  EXPECT_DOUBLE_EQ(*m.auc, 1.0);
  EXPECT_EQ(m.tp, 1u);
  EXPECT_EQ(m.tn, 3u);
  ScoreSeries bad = a;
  bad.labels.pop_back();
  EXPECT_THROW(bad.validate(), ShapeError);
  const json j = a;
  EXPECT_EQ(j.get<ScoreSeries>().smoothed, a.smoothed);
}
