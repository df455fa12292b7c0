// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zq/error.hpp"
#include "zq/eval.hpp"

namespace zq {
namespace {

ToyConfig eval_toy(std::uint64_t seed) {
  ToyConfig c;
  c.vocab = 64;
  c.dim = 32;
  c.heads = 4;
  c.layers = 2;
  c.seed = seed;
  return c;
}

TEST(Perplexity, UniformLogitsGiveVocabularySize) {
  const TokenBatch b = TokenBatch::single({1, 5, 3, 7, 2});
  EXPECT_NEAR(perplexity_from_logits(Tensor({5, 10}), b), 10.0, 1e-3);
}

TEST(Perplexity, OneHotPredictorGivesOne) {
  const TokenBatch b = TokenBatch::single({1, 5, 3, 7});
  Tensor logits = Tensor::filled({4, 10}, -1000.0f);
  for (std::size_t i = 0; i + 1 < 4; ++i) logits(i, b.ids[i + 1]) = 0.0f;
  EXPECT_DOUBLE_EQ(perplexity_from_logits(logits, b), 1.0);
}

TEST(Perplexity, HandExampleAndBounds) {
  // Two targets with probabilities 1/2 and 1/4: exp((ln 2 + ln 4) / 2) = sqrt(8).
  const TokenBatch b = TokenBatch::single({0, 0, 1});
  const float l3 = static_cast<float>(std::log(3.0));
  const Tensor logits = Tensor::from_rows({{l3, 0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  EXPECT_NEAR(perplexity_from_logits(logits, b), std::sqrt(2.0 * 4.0), 1e-6);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor l = Tensor::randn({6, 9}, rng, 3.0f);
    const TokenBatch r = random_token_batch(9, 2, 3, rng);
    EXPECT_GE(perplexity_from_logits(l, r), 1.0);
  }
}

TEST(Perplexity, Errors) {
  EXPECT_THROW(perplexity_from_logits(Tensor({1, 4}), TokenBatch::single({1})), UsageError);
  EXPECT_THROW(perplexity_from_logits(Tensor({2, 4}), TokenBatch::single({1, 4})), InputError);
  const ToyModel m = make_toy_model(eval_toy(1));
  EXPECT_THROW(perplexity(m, TokenStream({3}), PrecisionConfig::full(), 8), UsageError);
}

TEST(Perplexity, StreamWindowsMatchBatchComputation) {
  const ToyModel m = make_toy_model(eval_toy(2));
  Rng rng(2);
  const TokenBatch b = random_token_batch(m.vocab(), 1, 16, rng);
  const double whole = perplexity(m, TokenStream(b.ids), PrecisionConfig::full(), 16);
  EXPECT_DOUBLE_EQ(whole, perplexity_from_logits(model_forward(b, m, PrecisionConfig::full()), b));
}

TEST(Perplexity, Int8CloseToFloat) {
  ToyConfig c;
  c.seed = 3;
  const ToyModel m = make_toy_model(c);
  Rng rng(3);
  const TokenStream stream(sample_from_model(m, 4, 32, rng).ids);
  const double f = perplexity(m, stream, PrecisionConfig::full(), 32);
  const double q = perplexity(m, stream, PrecisionConfig::from_scheme("W8A8", 16), 32);
  EXPECT_LT(std::fabs(q - f) / f, 0.1);
}

TEST(Footprint, SingleInt8Matrix) {
  Rng rng(4);
  const LinearWeight w = quantize_weight_groupwise(Tensor::randn({64, 64}, rng), 8, 8);
  const Footprint f = footprint(w);
  EXPECT_EQ(f.bytes(), 64.0 * 64.0 + 4.0 * 8.0);
  EXPECT_EQ(f.baseline_bytes(), 2.0 * 64 * 64);
  const LinearWeight full = Tensor::randn({64, 64}, rng);
  EXPECT_EQ(footprint(full).ratio(), 1.0);
}

TEST(Footprint, MixedBlockFormula) {
  Rng rng(5);
  const std::size_t d = 64, g = 16;
  const BlockWeights b = make_block(d, 4, 0.02f, rng);
  const Footprint f = footprint(b, PrecisionConfig::from_scheme("W4/8A8", g));
  EXPECT_EQ(f.bits, 8 * 8 * d * d + 6 * 32 * g);
  EXPECT_EQ(f.baseline_bits, 16 * 12 * d * d);
  EXPECT_EQ(footprint(quantize_block(b, PrecisionConfig::from_scheme("W4/8A8", g))).bits, f.bits);
  EXPECT_EQ(footprint(b, PrecisionConfig::full()).ratio(), 1.0);
}

TEST(Footprint, AdditiveOverBlocks) {
  const ToyModel m = make_toy_model(eval_toy(6));
  const PrecisionConfig p = PrecisionConfig::from_scheme("W8A16", 4);
  Footprint sum;
  for (const Block& b : m.blocks) sum += footprint(std::get<BlockWeights>(b), p);
  const Footprint whole = footprint(m, p);
  EXPECT_EQ(whole.bits, sum.bits);
  EXPECT_EQ(whole.baseline_bits, sum.baseline_bits);
}

TEST(Footprint, DefaultToyRatios) {
  const ToyModel m = make_toy_model(ToyConfig{});
  const std::size_t g = default_group_count(m.dim());
  EXPECT_NEAR(footprint(m, PrecisionConfig::from_scheme("W4/8A8", g)).ratio(), 3.0, 0.05);
  EXPECT_NEAR(footprint(m, PrecisionConfig::from_scheme("W8A8", g)).ratio(), 2.0, 0.05);
}

TEST(SchemeCompare, FullPrecisionIsExact) {
  const ToyModel m = make_toy_model(eval_toy(7));
  Rng rng(7);
  const TokenBatch b = random_token_batch(m.vocab(), 2, 8, rng);
  const std::vector<PrecisionConfig> schemes = {PrecisionConfig::full()};
  const auto r = scheme_compare(m, schemes, b);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].output_mse, 0.0);
  for (double v : r[0].layer_mse) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r[0].agreement, 1.0);
  EXPECT_EQ(r[0].footprint.ratio(), 1.0);
  EXPECT_EQ(r[0].label, "W16A16");
}

TEST(SchemeCompare, ReorderingPermutesRows) {
  const ToyModel m = make_toy_model(eval_toy(8));
  Rng rng(8);
  const TokenBatch b = random_token_batch(m.vocab(), 2, 8, rng);
  const std::vector<PrecisionConfig> ab = {PrecisionConfig::from_scheme("W8A8", 4),
                                           PrecisionConfig::from_scheme("W4/8A16", 4)};
  const std::vector<PrecisionConfig> ba = {ab[1], ab[0]};
  const auto x = scheme_compare(m, ab, b);
  const auto y = scheme_compare(m, ba, b);
  std::ostringstream sx, sy;
  write_csv(sx, scheme_table(std::vector<SchemeReport>{x[1], x[0]}));
  write_csv(sy, scheme_table(y));
  EXPECT_EQ(sx.str(), sy.str());
}

TEST(SchemeCompare, PtqBaselineNoBetterThanFineGrained) {
  ToyConfig c = eval_toy(9);
  c.hetero_knob = true;
  const ToyModel m = make_toy_model(c);
  Rng rng(9);
  std::vector<TokenBatch> calib;
  for (int i = 0; i < 4; ++i) calib.push_back(random_token_batch(m.vocab(), 2, 8, rng));
  const CalibrationTable table = to_calibration_table(calibrate_sites(m, calib, 0.95f, 8));
  PrecisionConfig ptq = PrecisionConfig::from_scheme("W8A8", 1);
  ptq.activation_static = true;
  const std::vector<PrecisionConfig> schemes = {ptq, PrecisionConfig::from_scheme("W8A8", 8)};
  const auto r = scheme_compare(m, schemes, random_token_batch(m.vocab(), 2, 8, rng), &table);
  EXPECT_GE(r[0].output_mse, r[1].output_mse);
}

TEST(Bench, RowsPerShapeAndPositiveTimes) {
  const std::vector<GemmShape> shapes = {{4, 16, 16}, {8, 32, 64}};
  const auto rows = bench(shapes, 20, 1);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_GT(r.int8_us, 0.0);
    EXPECT_GT(r.float_us, 0.0);
  }
  EXPECT_EQ(bench_table(rows).rows.size(), 2u);
  EXPECT_THROW(bench(shapes, 5, 1), UsageError);
}

TEST(Tables, CsvAndAligned) {
  Table t{{"a", "bb"}, {{"1", "2"}, {"333", "4"}}};
  std::ostringstream csv, aligned;
  write_csv(csv, t);
  write_aligned(aligned, t);
  EXPECT_EQ(csv.str(), "a,bb\n1,2\n333,4\n");
  EXPECT_NE(aligned.str().find("333"), std::string::npos);
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), std::stod(format_number(std::stod(format_number(1.0 / 3.0)))));
}

TEST(Tables, RangeTablesHaveOneRowPerEntry) {
  const ToyModel m = make_toy_model(eval_toy(10));
  const RangeReport r = range_report(m, TokenBatch::single({1, 2, 3, 4}));
  EXPECT_EQ(token_range_table(r).rows.size(), r.tokens.size());
  EXPECT_EQ(weight_range_table(r).rows.size(), r.w_o.size());
}

}  // namespace
}  // namespace zq
