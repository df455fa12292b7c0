// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "zq/error.hpp"
#include "zq/token_data.hpp"

namespace zq {
namespace {

namespace fs = std::filesystem;

TEST(RandomTokens, InRangeAndSeeded) {
  Rng a(5), b(5);
  const TokenBatch x = random_token_batch(7, 3, 11, a);
  EXPECT_EQ(x.ids, random_token_batch(7, 3, 11, b).ids);
  EXPECT_EQ(x.tokens(), 33u);
  for (auto id : x.ids) EXPECT_LT(id, 7u);
  Rng c(5);
  EXPECT_THROW(random_token_batch(1, 1, 4, c), UsageError);
}

TEST(TokenStream, FileRoundTripAndErrors) {
  const fs::path dir = fs::temp_directory_path() / "zq_token_data_test";
  fs::create_directories(dir);
  TokenBatch b;
  b.ids = {1, 2, 3, 4, 5, 6};
  b.batch = 2;
  b.seq_len = 3;
  write_token_file((dir / "t.txt").string(), b);
  const TokenStream s = TokenStream::from_file((dir / "t.txt").string());
  EXPECT_EQ(s.tokens(), b.ids);
  EXPECT_THROW(s.check_vocab(6), InputError);
  EXPECT_NO_THROW(s.check_vocab(7));
  std::ofstream((dir / "bad.txt").string()) << "1 2 x\n";
  EXPECT_THROW(TokenStream::from_file((dir / "bad.txt").string()), InputError);
  std::ofstream((dir / "neg.txt").string()) << "1 -2\n";
  EXPECT_THROW(TokenStream::from_file((dir / "neg.txt").string()), InputError);
  EXPECT_THROW(TokenStream::from_file((dir / "none.txt").string()), InputError);
  fs::remove_all(dir);
}

TEST(TokenStream, SequentialBatchesWrap) {
  const TokenStream s({0, 1, 2, 3, 4});
  // Only whole windows are used; the window index wraps.
  const TokenStream t({0, 1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.sequential_batch(0, 2, 3).ids, (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(t.sequential_batch(1, 1, 3).ids, (std::vector<std::uint32_t>{3, 4, 5}));
  EXPECT_EQ(s.sequential_batch(0, 2, 3).ids, (std::vector<std::uint32_t>{0, 1, 2, 0, 1, 2}));
  EXPECT_THROW(s.sequential_batch(0, 1, 6), InputError);
  Rng rng(1);
  const TokenBatch r = s.sample_batch(4, 2, rng);
  EXPECT_EQ(r.tokens(), 8u);
}

TEST(SampleFromModel, DeterministicAndInVocabulary) {
  ToyConfig c;
  c.vocab = 32;
  c.dim = 16;
  c.heads = 2;
  c.layers = 1;
  const ToyModel m = make_toy_model(c);
  Rng a(3), b(3);
  const TokenBatch x = sample_from_model(m, 2, 6, a);
  EXPECT_EQ(x.ids, sample_from_model(m, 2, 6, b).ids);
  EXPECT_EQ(x.batch, 2u);
  for (auto id : x.ids) EXPECT_LT(id, 32u);
}

}  // namespace
}  // namespace zq
