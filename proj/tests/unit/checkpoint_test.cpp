// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "zq/checkpoint.hpp"
#include "zq/error.hpp"

namespace zq {
namespace {

Checkpoint mixed_checkpoint() {
  ToyConfig c;
  c.vocab = 40;
  c.dim = 32;
  c.heads = 2;
  c.layers = 3;
  c.seed = 17;
  ToyModel m = make_toy_model(c);
  PrecisionConfig p = PrecisionConfig::from_scheme("W4/8A8", 4);
  m.blocks[0] = quantize_block(std::get<BlockWeights>(m.blocks[0]), p);
  QuantizedBlock q = quantize_block(std::get<BlockWeights>(m.blocks[1]), p);
  q.static_scales = SiteScales{0.1f, 0.2f, 0.3f, 0.4f};
  m.blocks[1] = q;
  return {m, p};
}

TEST(Checkpoint, RoundTripsBitExactly) {
  const Checkpoint c = mixed_checkpoint();
  const auto bytes = encode_checkpoint(c);
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back, c);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  EXPECT_EQ(bytes[0], 'Z');
  EXPECT_EQ(bytes[3], 'K');
}

TEST(Checkpoint, FloatModelWithoutPrecision) {
  ToyConfig tc;
  tc.seed = 3;
  const Checkpoint c{make_toy_model(tc), std::nullopt};
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(c)), c);
}

TEST(Checkpoint, FilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "zq_checkpoint_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.zqck").string();
  const Checkpoint c = mixed_checkpoint();
  save_checkpoint(path, c);
  EXPECT_EQ(load_checkpoint(path), c);
  EXPECT_EQ(read_file_bytes(path), encode_checkpoint(c));
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(path), InputError);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto bytes = encode_checkpoint(mixed_checkpoint());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), InputError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(decode_checkpoint(bad_version), InputError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut)), InputError) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), InputError);
}

}  // namespace
}  // namespace zq
