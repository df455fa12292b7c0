// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "zq/error.hpp"
#include "zq/quant.hpp"
#include "zq/rng.hpp"

namespace zq {
namespace {

double recon_mse(const Tensor& w, std::size_t groups, int bits) {
  return mean_squared_error(quantize_weight_groupwise(w, groups, bits).dequantize(), w);
}

TEST(ComputeScale, Examples) {
  const float v[] = {0.5f, -2.0f, 1.0f};
  EXPECT_EQ(compute_scale(v, 8), 2.0f / 127.0f);
  const float z[] = {0.0f, 0.0f, 0.0f};
  EXPECT_EQ(compute_scale(z, 4), 1.0f);
  EXPECT_THROW(compute_scale(std::span<const float>(), 8), UsageError);
  EXPECT_THROW(compute_scale(v, 3), UsageError);
}

TEST(ComputeScale, TimesQmaxRecoversMaxAbs) {
  Rng rng(1);
  for (int bits : {4, 8}) {
    const Tensor x = Tensor::randn({257}, rng, 2.5f);
    float mx = 0.0f;
    for (float e : x.data()) mx = std::max(mx, std::fabs(e));
    const double s = compute_scale(x.data(), bits);
    EXPECT_NEAR(s * qmax_for_bits(bits), mx, 1e-7 * std::max(1.0f, mx));
  }
}

TEST(QuantizeValue, Examples) {
  const float s = 2.0f / 127.0f;
  EXPECT_EQ(quantize_value(1.0f, s, 8), 64);
  EXPECT_EQ(quantize_value(0.0f, s, 8), 0);
  EXPECT_EQ(quantize_value(0.0f, 0.3f, 4), 0);
  EXPECT_EQ(quantize_value(-2.0f, s, 8), -127);
  EXPECT_EQ(quantize_value(1e9f, s, 4), 7);
  EXPECT_THROW(quantize_value(std::numeric_limits<float>::infinity(), s, 8), ValueError);
  EXPECT_THROW(quantize_value(std::nanf(""), s, 8), ValueError);
  EXPECT_THROW(quantize_value(1.0f, 0.0f, 8), UsageError);
}

TEST(QuantizeValue, TiesRoundAwayFromZero) {
  EXPECT_EQ(quantize_value(2.5f, 1.0f, 8), 3);
  EXPECT_EQ(quantize_value(-2.5f, 1.0f, 8), -3);
  EXPECT_EQ(quantize_value(0.5f, 1.0f, 8), 1);
}

TEST(DequantizeValue, Examples) {
  EXPECT_NEAR(dequantize_value(64, 2.0f / 127.0f), 1.00787, 1e-5);
  EXPECT_EQ(dequantize_value(0, 123.0f), 0.0f);
}

TEST(QuantizeValue, NegationSymmetryAndMonotonicity) {
  Rng rng(2);
  for (int bits : {4, 8}) {
    const float s = 0.037f;
    std::vector<float> xs;
    for (int i = 0; i < 5000; ++i) xs.push_back(static_cast<float>(rng.uniform(-6.0, 6.0)));
    // Include exact ties.
    for (int k = -20; k <= 20; ++k) xs.push_back((static_cast<float>(k) + 0.5f) * s);
    for (float x : xs) ASSERT_EQ(quantize_value(-x, s, bits), -quantize_value(x, s, bits)) << x;
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 1; i < xs.size(); ++i) {
      ASSERT_LE(quantize_value(xs[i - 1], s, bits), quantize_value(xs[i], s, bits));
    }
  }
}

TEST(QuantizeValue, RoundTripWithinHalfScale) {
  Rng rng(3);
  for (int bits : {4, 8}) {
    const Tensor x = Tensor::randn({4096}, rng, 1.7f);
    const float s = compute_scale(x.data(), bits);
    for (float e : x.data()) {
      const float back = dequantize_value(quantize_value(e, s, bits), s);
      // Exact bound s/2, plus rounding of the float product q*s.
      const double slack = 0.5 * std::fabs(std::nextafter(back, INFINITY) - back);
      ASSERT_LE(std::fabs(static_cast<double>(e) - back), s / 2.0 + slack);
    }
  }
}

TEST(PartitionRows, RemainderJoinsLastGroup) {
  EXPECT_EQ(partition_rows(5, 2), (std::vector<GroupSpan>{{0, 2}, {2, 3}}));
  EXPECT_EQ(partition_rows(64, 16).size(), 16u);
  EXPECT_EQ(partition_rows(10, 3), (std::vector<GroupSpan>{{0, 3}, {3, 3}, {6, 4}}));
  EXPECT_THROW(partition_rows(4, 5), UsageError);
  EXPECT_THROW(partition_rows(4, 0), UsageError);
}

TEST(PartitionRows, HardwareAlignment) {
  EXPECT_TRUE(is_hw_aligned(partition_rows(64, 4)));
  EXPECT_FALSE(is_hw_aligned(partition_rows(64, 16)));
  EXPECT_TRUE(is_hw_aligned(partition_rows(768, 48)));
}

TEST(GroupwiseWeights, HandExample) {
  const Tensor w = Tensor::from_rows({{10, -10}, {8, 8}, {0.1f, -0.1f}, {0.05f, 0.1f}});
  const QuantizedMatrix q = quantize_weight_groupwise(w, 2, 8);
  ASSERT_EQ(q.num_groups(), 2u);
  EXPECT_EQ(q.group_scales[0], 10.0f / 127.0f);
  EXPECT_EQ(q.group_scales[1], 0.1f / 127.0f);
  EXPECT_EQ(q.at(0, 0), 127);
  EXPECT_EQ(q.at(1, 0), 102);  // 8 * 12.7 = 101.6
  EXPECT_EQ(q.at(3, 0), 64);   // 0.05 / (0.1/127) = 63.5 -> 64
  // Small rows keep fine resolution: per-tensor would flush them to zero.
  const QuantizedMatrix pt = quantize_weight_groupwise(w, 1, 8);
  EXPECT_EQ(pt.at(3, 0), 1);
  EXPECT_LT(recon_mse(w, 2, 8), recon_mse(w, 1, 8));
  EXPECT_NO_THROW(q.validate());
}

TEST(GroupwiseWeights, OneGroupIsPerTensor) {
  Rng rng(4);
  const Tensor w = Tensor::randn({12, 5}, rng);
  const QuantizedMatrix q = quantize_weight_groupwise(w, 1, 8);
  const float s = compute_scale(w.data(), 8);
  ASSERT_EQ(q.group_scales, std::vector<float>{s});
  for (std::size_t i = 0; i < w.size(); ++i) ASSERT_EQ(q.values[i], quantize_value(w[i], s, 8));
}

TEST(GroupwiseWeights, RejectsBadGroupCounts) {
  EXPECT_THROW(quantize_weight_groupwise(Tensor({4, 4}), 5, 8), UsageError);
  EXPECT_THROW(quantize_weight_groupwise(Tensor({4, 4}), 0, 8), UsageError);
}

TEST(GroupwiseWeights, LogicalBits) {
  Rng rng(5);
  const QuantizedMatrix q = quantize_weight_groupwise(Tensor::randn({64, 64}, rng), 16, 4);
  EXPECT_EQ(q.logical_bits(), 64u * 64u * 4u + 32u * 16u);
}

TEST(GroupwiseWeights, ValuesStayInRestrictedRange) {
  Rng rng(6);
  for (int bits : {4, 8}) {
    const QuantizedMatrix q = quantize_weight_groupwise(Tensor::randn({33, 17}, rng, 5.0f), 4, bits);
    for (std::int8_t v : q.values) {
      ASSERT_LE(v, qmax_for_bits(bits));
      ASSERT_GE(v, -qmax_for_bits(bits));
    }
  }
}

TEST(GroupwiseWeights, ValidateCatchesBrokenInvariants) {
  Rng rng(7);
  QuantizedMatrix q = quantize_weight_groupwise(Tensor::randn({8, 4}, rng), 2, 4);
  QuantizedMatrix bad = q;
  bad.values[0] = 8;
  EXPECT_THROW(bad.validate(), InvariantError);
  bad = q;
  bad.group_layout[1].start = 3;
  EXPECT_THROW(bad.validate(), InvariantError);
  bad = q;
  bad.group_scales.pop_back();
  EXPECT_THROW(bad.validate(), InvariantError);
}

TEST(GroupwiseWeights, RefinementNeverHurtsOnSeededMatrices) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor w = Tensor::randn({64, 64}, rng, 0.02f);
    if (seed % 2) {
      for (std::size_t r = 0; r < 64; r += 4)
        for (float& v : w.row(r)) v *= 10.0f;
    }
    for (int bits : {4, 8}) {
      double prev = recon_mse(w, 1, bits);
      for (std::size_t g : {2, 4, 8, 16}) {
        const double cur = recon_mse(w, g, bits);
        EXPECT_LE(cur, prev) << "seed " << seed << " bits " << bits << " g " << g;
        prev = cur;
      }
    }
  }
}

TEST(GroupwiseWeights, TenfoldRowSpreadFavoursGroups) {
  Rng rng(8);
  Tensor w = Tensor::randn({64, 64}, rng, 0.02f);
  for (std::size_t r = 0; r < 16; ++r)
    for (float& v : w.row(r)) v *= 10.0f;
  EXPECT_LT(recon_mse(w, 16, 8), recon_mse(w, 1, 8));
}

TEST(TokenwiseActivations, ScalesFollowRowRanges) {
  const Tensor x = Tensor::from_rows({{35, -1, 2}, {-8, 4, 0}});
  const QuantizedActivation q = quantize_activation_tokenwise(x, 8);
  EXPECT_FALSE(q.is_static());
  EXPECT_EQ(q.scale_for_row(0), 35.0f / 127.0f);
  EXPECT_EQ(q.scale_for_row(1), 8.0f / 127.0f);
}

TEST(TokenwiseActivations, SingleTokenEqualsPerTensor) {
  Rng rng(9);
  const Tensor x = Tensor::randn({1, 40}, rng);
  const QuantizedActivation a = quantize_activation_tokenwise(x, 8);
  const QuantizedActivation b = quantize_activation_static(x, compute_scale(x.data(), 8), 8);
  EXPECT_EQ(a.values, b.values);
  EXPECT_EQ(a.dequantize(), b.dequantize());
}

TEST(TokenwiseActivations, BeatStaticOnHeterogeneousTokens) {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = Tensor::randn({8, 32}, rng);
    for (std::size_t r = 0; r < 8; ++r)
      for (float& v : x.row(r)) v *= static_cast<float>(1 + 3 * r);  // >= 2x spread
    const float static_scale = compute_scale(x.data(), 8);
    const double tok = mean_squared_error(quantize_activation_tokenwise(x, 8).dequantize(), x);
    const double sta = mean_squared_error(quantize_activation_static(x, static_scale, 8).dequantize(), x);
    EXPECT_LE(tok, sta);
  }
}

TEST(StaticActivations, ClampsOutOfRange) {
  const float s = 0.01f;
  const Tensor x = Tensor::from_rows({{3.0f * s * 127.0f, -3.0f * s * 127.0f, 0.2f}});
  const QuantizedActivation q = quantize_activation_static(x, s, 8);
  EXPECT_EQ(q.values[0], 127);
  EXPECT_EQ(q.values[1], -127);
  EXPECT_EQ(q.values[2], 20);
  EXPECT_TRUE(q.is_static());
  EXPECT_THROW(quantize_activation_static(x, 0.0f, 8), UsageError);
  EXPECT_THROW(quantize_activation_static(x, -1.0f, 8), UsageError);
}

TEST(Calibrator, MomentumUpdate) {
  Calibrator c(0.95f);
  c.observe(Tensor::from_values({1.0f, -0.5f}));
  EXPECT_EQ(c.x_max(), 1.0f);
  EXPECT_EQ(c.x_min(), -0.5f);
  c.observe(Tensor::from_values({2.0f, -0.5f}));
  EXPECT_NEAR(c.x_max(), 1.05f, 1e-6);
  EXPECT_NEAR(c.finalize(8), 1.05f / 127.0f, 1e-8);
  EXPECT_EQ(c.observed_batches(), 2u);
}

TEST(Calibrator, ConvergesToRepeatedBatch) {
  Calibrator c(0.95f);
  c.observe(Tensor::from_values({0.0f}));
  for (int i = 0; i < 100; ++i) c.observe(Tensor::from_values({3.0f, -1.0f}));
  // Geometric series: 3 * (1 - 0.95^100).
  EXPECT_NEAR(c.x_max(), 3.0 * (1.0 - std::pow(0.95, 100)), 1e-4);
  EXPECT_NEAR(c.x_max(), 3.0, 2e-2);
}

TEST(Calibrator, Degenerate) {
  Calibrator c;
  EXPECT_EQ(c.momentum(), 0.95f);
  EXPECT_THROW(c.finalize(8), UsageError);
  c.observe(Tensor::from_values({0.0f, 0.0f}));
  EXPECT_EQ(c.finalize(8), 1.0f);
  EXPECT_THROW(Calibrator(1.0f), UsageError);
  EXPECT_THROW(Calibrator(0.0f), UsageError);
}

TEST(Calibrator, SymmetricDataNearPooledScale) {
  Rng rng(11);
  Calibrator c;
  std::vector<float> pooled;
  for (int i = 0; i < 100; ++i) {
    const Tensor b = Tensor::randn({256}, rng);
    c.observe(b);
    pooled.insert(pooled.end(), b.data().begin(), b.data().end());
  }
  const double pooled_scale = compute_scale(pooled, 8);
  // Per-batch maxima sit below the pooled maximum; the running value tracks
  // their typical size.
  EXPECT_LE(c.finalize(8), pooled_scale);
  EXPECT_GT(c.finalize(8), 0.6 * pooled_scale);
}

TEST(Calibrator, DeterministicPerBatchOrder) {
  Rng rng(12);
  std::vector<Tensor> batches;
  for (int i = 0; i < 10; ++i) batches.push_back(Tensor::randn({64}, rng));
  Calibrator a, b;
  for (const auto& t : batches) {
    a.observe(t);
    b.observe(t);
  }
  EXPECT_EQ(a.finalize(8), b.finalize(8));
}

TEST(QuantSpec, GranularityRules) {
  QuantSpec w{8, Granularity::PerGroup, 4, ScaleMode::Dynamic};
  EXPECT_NO_THROW(w.validate_for_weights());
  EXPECT_THROW(w.validate_for_activations(), UsageError);
  QuantSpec a{8, Granularity::PerToken, 1, ScaleMode::Dynamic};
  EXPECT_NO_THROW(a.validate_for_activations());
  EXPECT_THROW(a.validate_for_weights(), UsageError);
}

}  // namespace
}  // namespace zq
