#include "ckmerge/quantile.hpp"

#include <algorithm>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace ckmerge;

namespace {

TEST(Quartiles, FourElements) {
  const std::vector<double> v = {1, 2, 3, 4};
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 2.5);
  EXPECT_EQ(q.q1, 1.5);
  EXPECT_EQ(q.q3, 3.5);
}

TEST(Quartiles, OddCountExcludesMedianFromHalves) {
  const std::vector<double> v = {5, 1, 4, 2, 3};
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 3.0);
  EXPECT_EQ(q.q1, 1.5);  // median of {1, 2}
  EXPECT_EQ(q.q3, 4.5);  // median of {4, 5}
}

TEST(Quartiles, ConstantVector) {
  const std::vector<double> v(37, 5.5);
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 5.5);
  EXPECT_EQ(q.q1, 5.5);
  EXPECT_EQ(q.q3, 5.5);
}

TEST(Quartiles, SingleElement) {
  const std::vector<double> v = {5};
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 5.0);
  EXPECT_EQ(q.q1, 5.0);
  EXPECT_EQ(q.q3, 5.0);
}

TEST(Quartiles, TwoElements) {
  const std::vector<double> v = {9, 1};
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 5.0);
  EXPECT_EQ(q.q1, 1.0);
  EXPECT_EQ(q.q3, 9.0);
}

TEST(Quartiles, ThreeElements) {
  const std::vector<double> v = {3, 1, 2};
  const Quartiles q = exact_quartiles(v);
  EXPECT_EQ(q.median, 2.0);
  EXPECT_EQ(q.q1, 1.0);
  EXPECT_EQ(q.q3, 3.0);
}

TEST(Quartiles, EmptyInputThrows) {
  EXPECT_THROW(exact_quartiles(std::vector<double>{}), ValidationError);
  EXPECT_THROW(dynamic_threshold(std::vector<double>{}, 1.5), ValidationError);
}

TEST(Quartiles, MatchesSortOracleOnRandomInputs) {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 300; ++trial) {
    std::uniform_int_distribution<std::size_t> size_dist(1, 1000);
    const std::size_t n = trial < 20 ? trial + 1 : size_dist(rng);
    std::vector<double> v(n);
    if (trial % 3 == 0) {
      // duplicate-heavy: small integer support
      std::uniform_int_distribution<int> val(-5, 5);
      for (double& x : v) x = val(rng);
    } else {
      std::normal_distribution<double> val(0.0, 100.0);
      for (double& x : v) x = val(rng);
    }
    const Quartiles q = exact_quartiles(v);
    const oracle::NaiveQuartiles expect = oracle::naive_quartiles(v);
    ASSERT_EQ(q.median, expect.median) << "n=" << n;
    ASSERT_EQ(q.q1, expect.q1) << "n=" << n;
    ASSERT_EQ(q.q3, expect.q3) << "n=" << n;
  }
}

TEST(Quartiles, PermutationInvariant) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> val(0.0, 1.0);
  std::vector<double> v(501);
  for (double& x : v) x = val(rng);
  const Quartiles q0 = exact_quartiles(v);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(v.begin(), v.end(), rng);
    const Quartiles q = exact_quartiles(v);
    ASSERT_EQ(q.median, q0.median);
    ASSERT_EQ(q.q1, q0.q1);
    ASSERT_EQ(q.q3, q0.q3);
  }
}

TEST(Quartiles, TranslationEquivariantOnExactInputs) {
  // integer-valued doubles keep every addition exact
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> val(-1000000, 1000000);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> size_dist(1, 200);
    std::vector<double> v(size_dist(rng));
    for (double& x : v) x = val(rng);
    const double c = val(rng);
    std::vector<double> shifted(v);
    for (double& x : shifted) x += c;
    const Quartiles q = exact_quartiles(v);
    const Quartiles qs = exact_quartiles(shifted);
    ASSERT_EQ(qs.median, q.median + c);
    ASSERT_EQ(qs.q1, q.q1 + c);
    ASSERT_EQ(qs.q3, q.q3 + c);
    const ImportanceStats t = dynamic_threshold(v, 2.0);
    const ImportanceStats ts = dynamic_threshold(shifted, 2.0);
    ASSERT_EQ(ts.threshold, t.threshold + c);
  }
}

TEST(Quartiles, PositiveScaleEquivariant) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> val(0.0, 1.0);
  std::vector<double> v(301);
  for (double& x : v) x = val(rng);
  const Quartiles q = exact_quartiles(v);
  for (const double a : {0.5, 2.0, 8.0}) {  // powers of two scale exactly
    std::vector<double> scaled(v);
    for (double& x : scaled) x *= a;
    const Quartiles qa = exact_quartiles(scaled);
    ASSERT_EQ(qa.median, a * q.median);
    ASSERT_EQ(qa.q1, a * q.q1);
    ASSERT_EQ(qa.q3, a * q.q3);
  }
  // arbitrary positive scale within floating-point tolerance
  const double a = 3.7;
  std::vector<double> scaled(v);
  for (double& x : scaled) x *= a;
  const Quartiles qa = exact_quartiles(scaled);
  EXPECT_NEAR(qa.median, a * q.median, 1e-12 * std::abs(a * q.median) + 1e-300);
}

TEST(DynamicThreshold, FourElementExample) {
  const std::vector<double> v = {1, 2, 3, 4};
  const ImportanceStats stats = dynamic_threshold(v, 1.5, "t");
  EXPECT_EQ(stats.median, 2.5);
  EXPECT_EQ(stats.iqr, 2.0);
  EXPECT_EQ(stats.threshold, 5.5);
  EXPECT_EQ(stats.scope, "t");
  EXPECT_EQ(stats.total, 4u);
  EXPECT_EQ(stats.updated, 0u);  // nothing exceeds 5.5
}

TEST(DynamicThreshold, ConstantVectorThresholdIsTheConstant) {
  const std::vector<double> v(9, 3.25);
  for (const double lambda : {0.0, 1.5, 100.0}) {
    const ImportanceStats stats = dynamic_threshold(v, lambda);
    EXPECT_EQ(stats.threshold, 3.25);
    EXPECT_EQ(stats.updated, 0u);
  }
}

TEST(DynamicThreshold, LambdaZeroCountsStrictlyAboveMedian) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> val(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> size_dist(1, 400);
    std::vector<double> v(size_dist(rng));
    for (double& x : v) x = val(rng);
    const ImportanceStats stats = dynamic_threshold(v, 0.0);
    EXPECT_EQ(stats.threshold, stats.median);
    std::uint64_t above = 0;
    for (double x : v)
      if (x > stats.median) ++above;
    EXPECT_EQ(stats.updated, above);
    EXPECT_LE(stats.updated, v.size() / 2);  // distinct values w.p. 1
  }
}

TEST(DynamicThreshold, StatsInvariantsHold) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> val(2.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<std::size_t> size_dist(1, 300);
    std::vector<double> v(size_dist(rng));
    for (double& x : v) x = val(rng);
    const ImportanceStats s = dynamic_threshold(v, 1.5);
    EXPECT_GE(s.q3, s.q1);
    EXPECT_GE(s.iqr, 0.0);
    EXPECT_LE(s.q1, s.median);
    EXPECT_GE(s.q3, s.median);
    EXPECT_EQ(s.threshold, s.median + 1.5 * s.iqr);
    EXPECT_LE(s.updated, s.total);
  }
}

TEST(GlobalQuartiles, SingleVectorMatchesExact) {
  const std::vector<std::vector<double>> parts = {{4, 1, 3, 2}};
  const Quartiles g = global_quartiles(parts);
  const Quartiles e = exact_quartiles(parts[0]);
  EXPECT_EQ(g.median, e.median);
  EXPECT_EQ(g.q1, e.q1);
  EXPECT_EQ(g.q3, e.q3);
}

TEST(GlobalQuartiles, TwoVectorConcatenation) {
  const std::vector<std::vector<double>> parts = {{1, 3}, {2, 4}};
  const Quartiles g = global_quartiles(parts);
  const std::vector<double> concat = {1, 3, 2, 4};
  const Quartiles e = exact_quartiles(concat);
  EXPECT_EQ(g.median, e.median);
  EXPECT_EQ(g.q1, e.q1);
  EXPECT_EQ(g.q3, e.q3);
}

TEST(GlobalQuartiles, ManyVectorsMatchConcatenationOracle) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> val(0.0, 10.0);
  std::vector<std::vector<double>> parts(100);
  std::vector<double> concat;
  std::uniform_int_distribution<std::size_t> size_dist(0, 2000);
  for (auto& part : parts) {
    part.resize(size_dist(rng));
    for (double& x : part) x = val(rng);
    concat.insert(concat.end(), part.begin(), part.end());
  }
  const Quartiles g = global_quartiles(parts);
  const oracle::NaiveQuartiles e = oracle::naive_quartiles(concat);
  EXPECT_EQ(g.median, e.median);
  EXPECT_EQ(g.q1, e.q1);
  EXPECT_EQ(g.q3, e.q3);
}

TEST(GlobalQuartiles, EmptyTotalThrows) {
  const std::vector<std::vector<double>> parts = {{}, {}};
  EXPECT_THROW(global_quartiles(parts), ValidationError);
}

TEST(GlobalQuartiles, CapExceededReportsCounts) {
  const std::vector<std::vector<double>> parts = {{1, 2, 3}, {4, 5}};
  try {
    global_quartiles(parts, 4);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("5"), std::string::npos);
    EXPECT_NE(what.find("4"), std::string::npos);
  }
}

}  // namespace
