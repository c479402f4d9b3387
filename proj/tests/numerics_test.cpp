// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dpzv/numerics.hpp"
#include "oracles.hpp"

namespace dpzv {
namespace {

TEST(SeededStream, EqualStateGivesEqualDraws) {
  SeededStream a(42, 7);
  SeededStream b(42, 7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.NextU64(), b.NextU64());
  EXPECT_EQ(a, b);
}

TEST(SeededStream, AdvanceMatchesDiscardingDraws) {
  for (uint64_t k : {0u, 1u, 5u, 1000u}) {
    SeededStream a(9);
    SeededStream b(9);
    a.Advance(k);
    const uint64_t skipped = a.NextU64();
    uint64_t last = 0;
    for (uint64_t i = 0; i <= k; ++i) last = b.NextU64();
    EXPECT_EQ(skipped, last) << "k=" << k;
  }
}

TEST(SeededStream, DerivedSeedsDiffer) {
  EXPECT_NE(DeriveSeed(1, 0), DeriveSeed(1, 1));
  EXPECT_NE(DeriveSeed(1, 0), DeriveSeed(2, 0));
  EXPECT_EQ(DeriveSeed(5, 3), DeriveSeed(5, 3));
}

TEST(SeededStream, UniformInOpenInterval) {
  SeededStream s(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = s.NextUniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(SampleSphere, DimOneIsPlusMinusOne) {
  SeededStream s(11);
  bool saw_plus = false;
  bool saw_minus = false;
  for (int i = 0; i < 200; ++i) {
    const auto u = SampleSphere(1, s);
    ASSERT_EQ(u.size(), 1u);
    ASSERT_NEAR(std::fabs(u[0]), 1.0, 1e-15);
    (u[0] > 0 ? saw_plus : saw_minus) = true;
  }
  EXPECT_TRUE(saw_plus && saw_minus);
}

TEST(SampleSphere, NormIsSqrtDim) {
  SeededStream s(12);
  for (std::size_t d = 1; d <= 64; ++d) {
    const auto u = SampleSphere(d, s);
    double n2 = 0.0;
    for (double x : u) n2 += x * x;
    EXPECT_NEAR(std::sqrt(n2) / std::sqrt(static_cast<double>(d)), 1.0, 1e-12) << d;
  }
  const auto u16 = SampleSphere(16, s);
  double n2 = 0.0;
  for (double x : u16) n2 += x * x;
  EXPECT_NEAR(std::sqrt(n2), 4.0, 1e-12);
}

TEST(SampleSphere, ZeroDimIsError) {
  SeededStream s(1);
  try {
    SampleSphere(0, s);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidDimension);
  }
}

TEST(SampleSphere, SecondMomentIsIdentity) {
  constexpr std::size_t d = 8;
  constexpr int n = 100000;
  SeededStream s(13);
  std::vector<double> acc(d * d, 0.0);
  for (int k = 0; k < n; ++k) {
    const auto u = SampleSphere(d, s);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) acc[i * d + j] += u[i] * u[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_NEAR(acc[i * d + j] / n, i == j ? 1.0 : 0.0, 0.05) << i << "," << j;
    }
  }
}

TEST(SampleSphere, ReplayIsBitIdentical) {
  SeededStream a(77, 3);
  SeededStream b = a;
  const auto u1 = SampleSphere(33, a);
  const auto u2 = SampleSphere(33, b);
  EXPECT_EQ(u1, u2);
  EXPECT_EQ(a, b);
  const auto u3 = SphereDirection(33, SeededStream(77, 3)).Materialize();
  EXPECT_EQ(u1, u3);
}

// Negated samples should be indistinguishable from fresh ones: two-sample
// Kolmogorov-Smirnov on the first coordinate.
TEST(SampleSphere, SignSymmetry) {
  constexpr int n = 20000;
  SeededStream s(21);
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) a[i] = -SampleSphere(5, s)[0];
  for (int i = 0; i < n; ++i) b[i] = SampleSphere(5, s)[0];
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double ks = 0.0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    ks = std::max(ks, std::fabs(static_cast<double>(i) / n - static_cast<double>(j) / n));
  }
  // 0.1% critical value: 1.95 * sqrt(2/n).
  EXPECT_LT(ks, 1.95 * std::sqrt(2.0 / n));
}

TEST(SampleGaussian, ZeroSigmaIsExactlyZero) {
  SeededStream s(1);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(SampleGaussian(0.0, s), 0.0);
  EXPECT_EQ(s.counter(), 20u);  // draws are still consumed
}

TEST(SampleGaussian, NegativeSigmaIsError) {
  SeededStream s(1);
  try {
    SampleGaussian(-1.0, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidParameter);
  }
}

TEST(SampleGaussian, UnitVariance) {
  SeededStream s(5);
  std::vector<double> xs(1000000);
  for (auto& x : xs) x = SampleGaussian(1.0, s);
  const auto m = oracle::Summarize(xs);
  const double var = m.se * m.se * static_cast<double>(xs.size());
  EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(SampleGaussian, MeanNearZero) {
  SeededStream s(6);
  std::vector<double> xs(1000000);
  for (auto& x : xs) x = SampleGaussian(0.2, s);
  EXPECT_NEAR(oracle::Summarize(xs).mean, 0.0, 3 * 0.2 / 1e3);
}

TEST(StdNormalCdf, KnownPoints) {
  EXPECT_EQ(StdNormalCdf(0.0), 0.5);
  EXPECT_NEAR(StdNormalCdf(-1.5), oracle::NormalCdf(-1.5), 1e-12);
  EXPECT_NEAR(StdNormalCdf(-1.5), 0.0668072012688581, 1e-12);
  EXPECT_NEAR(StdNormalCdf(8.3), 1.0, 1e-12);
}

TEST(StdNormalCdf, MatchesIntegrationOracle) {
  for (double x = -8.0; x <= 8.0; x += 0.37) {
    EXPECT_NEAR(StdNormalCdf(x), oracle::NormalCdf(x), 1e-12) << x;
  }
}

TEST(StdNormalCdf, SymmetryAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-8.0, 8.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = u(rng);
    ASSERT_NEAR(StdNormalCdf(x) + StdNormalCdf(-x), 1.0, 1e-12);
  }
  double prev = 0.0;
  for (double x = -40.0; x <= 40.0; x += 0.01) {
    const double p = StdNormalCdf(x);
    ASSERT_GE(p, prev);
    ASSERT_LE(p, 1.0);
    prev = p;
  }
}

TEST(LogStdNormalCdf, ContinuousAcrossSwitchAndFiniteFarOut) {
  EXPECT_NEAR(LogStdNormalCdf(-34.999999), LogStdNormalCdf(-35.000001), 1e-4);
  EXPECT_NEAR(LogStdNormalCdf(-10.0), std::log(StdNormalCdf(-10.0)), 1e-12);
  const double far = LogStdNormalCdf(-1e4);
  EXPECT_TRUE(std::isfinite(far));
  EXPECT_NEAR(far / (-0.5e8), 1.0, 1e-6);
}

}  // namespace
}  // namespace dpzv
