// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "zq/rng.hpp"
#include "zq/transformer.hpp"

namespace zq {

/// Uniform ids in [0, vocab), [batch x seq_len].
TokenBatch random_token_batch(std::size_t vocab, std::size_t batch, std::size_t seq_len, Rng& rng);

/// Pre-tokenized id stream. On disk: whitespace-separated decimal ids, one
/// sequence per line; lines are concatenated into a single stream.
class TokenStream {
 public:
  TokenStream() = default;
  explicit TokenStream(std::vector<std::uint32_t> tokens) : tokens_(std::move(tokens)) {}

  /// Throws InputError if the file is missing, unreadable or malformed.
  static TokenStream from_file(const std::string& path);

  const std::vector<std::uint32_t>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  /// Throws InputError if any id is >= vocab.
  void check_vocab(std::size_t vocab) const;

  /// `batch` windows of `seq_len` ids at random offsets.
  TokenBatch sample_batch(std::size_t batch, std::size_t seq_len, Rng& rng) const;

  /// Consecutive windows starting at window index*batch, wrapping around.
  TokenBatch sequential_batch(std::size_t index, std::size_t batch, std::size_t seq_len) const;

 private:
  std::vector<std::uint32_t> tokens_;
};

/// Writes one line of space-separated ids per sequence.
void write_token_file(const std::string& path, const TokenBatch& sequences);

/// Autoregressively samples `batch` sequences of `seq_len` ids from the
/// model's full-precision next-token distribution.
TokenBatch sample_from_model(const ToyModel& model, std::size_t batch, std::size_t seq_len, Rng& rng);

}  // namespace zq
