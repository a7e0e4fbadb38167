#include "dsformer/rng.hpp"
#include "dsformer/sampling.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

using namespace dsformer;

namespace {

Tensor iota_row(std::size_t h) {
  Tensor x({1, h});
  for (std::size_t i = 0; i < h; ++i) x[i] = static_cast<double>(i + 1);
  return x;
}

std::vector<double> sorted_values(const Tensor& t) {
  std::vector<double> v(t.data().begin(), t.data().end());
  std::sort(v.begin(), v.end());
  return v;
}

} // namespace

TEST(ValidateInterval, Examples) {
  EXPECT_NO_THROW(validate_interval(96, 2));
  EXPECT_NO_THROW(validate_interval(36, 6));
  try {
    validate_interval(96, 5);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("96"), std::string::npos);
    EXPECT_NE(msg.find("5"), std::string::npos);
  }
  EXPECT_THROW(validate_interval(0, 1), ConfigError);
  EXPECT_THROW(validate_interval(4, 0), ConfigError);
}

TEST(DownSample, StrideExample) {
  EXPECT_EQ(down_sample(iota_row(6), 2), Tensor({1, 2, 3}, {1, 3, 5, 2, 4, 6}));
}

TEST(PiecewiseSample, ChunkExample) {
  EXPECT_EQ(piecewise_sample(iota_row(6), 2), Tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6}));
}

TEST(Sampling, IntervalOneIsAReshape) {
  Tensor x = iota_row(5);
  EXPECT_EQ(down_sample(x, 1), x.reshaped({1, 1, 5}));
  EXPECT_EQ(piecewise_sample(x, 1), x.reshaped({1, 1, 5}));
  SampledPair p = sample_pair(x, 1);
  EXPECT_EQ(p.x_ds, p.x_ps);
}

TEST(Sampling, PeriodicSignalGivesConstantSubsequences) {
  const std::size_t c = 4, h = 32;
  Tensor x({2, h});
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t i = 0; i < h; ++i)
      x.at(v, i) = std::sin(2.0 * std::numbers::pi * static_cast<double>(i % c) / c + static_cast<double>(v));
  Tensor ds = down_sample(x, c);
  const std::size_t d = h / c;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t j = 0; j < c; ++j) {
      double mean = 0.0;
      for (std::size_t k = 0; k < d; ++k) mean += ds.at(v, j, k);
      mean /= d;
      double var = 0.0;
      for (std::size_t k = 0; k < d; ++k) var += (ds.at(v, j, k) - mean) * (ds.at(v, j, k) - mean);
      EXPECT_LT(var / d, 1e-20);
    }
}

TEST(Sampling, BlockConstantSignalGivesConstantSegments) {
  const std::size_t c = 3, h = 12, d = h / c;
  Tensor x({1, h});
  for (std::size_t i = 0; i < h; ++i) x[i] = static_cast<double>(i / d) * 1.5;
  Tensor ps = piecewise_sample(x, c);
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t k = 0; k < d; ++k) EXPECT_EQ(ps.at(0, j, k), ps.at(0, j, 0));
}

TEST(Sampling, PairIsLosslessRearrangement) {
  Rng rng(21);
  Tensor x({3, 24});
  for (auto& v : x.storage()) v = rng.normal();
  SampledPair p = sample_pair(x, 4);
  EXPECT_EQ(p.interval, 4u);
  EXPECT_EQ(p.x_ds.shape(), (Shape{3, 4, 6}));
  EXPECT_EQ(p.x_ps.shape(), (Shape{3, 4, 6}));
  EXPECT_EQ(sorted_values(p.x_ds), sorted_values(x));
  EXPECT_EQ(sorted_values(p.x_ps), sorted_values(x));
}

TEST(Sampling, InversesReconstructExactly) {
  Rng rng(22);
  Tensor x({2, 5, 30});
  for (auto& v : x.storage()) v = rng.normal();
  for (std::size_t c : {1u, 2u, 3u, 5u, 6u, 10u, 15u, 30u}) {
    EXPECT_EQ(interleave(down_sample(x, c)), x) << "c=" << c;
    EXPECT_EQ(concatenate_segments(piecewise_sample(x, c)), x) << "c=" << c;
  }
}

TEST(Sampling, BatchedInputKeepsLeadingAxes) {
  Tensor x({4, 3, 12});
  EXPECT_EQ(down_sample(x, 3).shape(), (Shape{4, 3, 3, 4}));
  EXPECT_EQ(down_sample(Tensor({7}), 7).shape(), (Shape{7, 1}));
  EXPECT_THROW(piecewise_sample(Tensor({4, 3, 12}), 5), ConfigError);
}
