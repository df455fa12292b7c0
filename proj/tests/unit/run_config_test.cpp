// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "zq/error.hpp"
#include "zq/run_config.hpp"

namespace zq {
namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in, "test.cfg");
}

std::string error_of(const std::string& text) {
  try {
    parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(RunConfig, DefaultsAndOverrides) {
  const RunConfig d = parse("");
  EXPECT_EQ(d.scheme, "W4/8A8");
  EXPECT_EQ(d.lkd.learning_rate, 5e-6f);
  EXPECT_EQ(d.lkd.iterations, 100u);
  EXPECT_EQ(d.lkd.optimizer, OptimizerKind::Adam);
  EXPECT_TRUE(std::holds_alternative<RandomTokens>(d.lkd.data_source));
  const RunConfig c = parse(
      "# comment\n"
      "scheme = W8A8\n"
      "groups = 4   # trailing\n"
      "learning_rate = 1e-4\n"
      "iterations = 7\n"
      "optimizer = sgd\n"
      "loss = kl\n"
      "data_source = corpus\n"
      "data = tokens.txt\n"
      "seed = 9\n");
  EXPECT_EQ(c.scheme, "W8A8");
  EXPECT_EQ(*c.groups, 4u);
  EXPECT_EQ(c.lkd.learning_rate, 1e-4f);
  EXPECT_EQ(c.lkd.iterations, 7u);
  EXPECT_EQ(c.lkd.optimizer, OptimizerKind::Sgd);
  EXPECT_EQ(c.lkd.loss, LossKind::Kl);
  EXPECT_EQ(std::get<AltCorpus>(c.lkd.data_source).path, "tokens.txt");
  EXPECT_EQ(c.lkd.seed, 9u);
  EXPECT_EQ(c.precision(64).group_count, 4u);
  EXPECT_EQ(parse("").precision(64).group_count, default_group_count(64));
}

TEST(RunConfig, ErrorsNameSourceAndLine) {
  EXPECT_EQ(error_of("iterations = 3\nbogus = 1\n").rfind("test.cfg:2:", 0), 0u);
  EXPECT_NE(error_of("seed = 1\nseed = 2\n").find("test.cfg:2"), std::string::npos);
  EXPECT_NE(error_of("iterations = -1\n"), "");
  EXPECT_NE(error_of("iterations = 3x\n"), "");
  EXPECT_NE(error_of("optimizer = rmsprop\n"), "");
  EXPECT_NE(error_of("no equals sign\n"), "");
  EXPECT_NE(error_of("data_source = original\n"), "");
  EXPECT_NE(error_of("learning_rate = 0\n"), "");
}

TEST(RunConfig, PrecisionSwitches) {
  const PrecisionConfig p = make_precision("W8A8", 4, true, false);
  EXPECT_TRUE(p.activation_static);
  EXPECT_EQ(make_precision("W8A8", 4, false, true).activations, ActivationScheme::AttnInputFull);
  EXPECT_THROW(make_precision("W8A16", 4, true, false), UsageError);
}

}  // namespace
}  // namespace zq
