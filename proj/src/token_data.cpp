// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/token_data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "zq/error.hpp"

namespace zq {

TokenBatch random_token_batch(std::size_t vocab, std::size_t batch, std::size_t seq_len, Rng& rng) {
  if (vocab < 2) throw UsageError("random_token_batch: vocabulary must hold at least two ids");
  if (batch == 0 || seq_len == 0) throw UsageError("random_token_batch: empty batch geometry");
  TokenBatch b;
  b.batch = batch;
  b.seq_len = seq_len;
  b.ids.resize(batch * seq_len);
  for (auto& id : b.ids) id = static_cast<std::uint32_t>(rng.uniform_int(vocab));
  return b;
}

TokenStream TokenStream::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open token file '" + path + "'");
  std::vector<std::uint32_t> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    while (ls >> word) {
      std::size_t used = 0;
      unsigned long value = 0;
      try {
        value = std::stoul(word, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != word.size() || word.front() == '-' || value > UINT32_MAX) {
        throw InputError(path + ":" + std::to_string(line_no) + ": '" + word + "' is not a token id");
      }
      tokens.push_back(static_cast<std::uint32_t>(value));
    }
  }
  if (in.bad()) throw InputError("error while reading token file '" + path + "'");
  if (tokens.empty()) throw InputError("token file '" + path + "' holds no ids");
  return TokenStream(std::move(tokens));
}

void TokenStream::check_vocab(std::size_t vocab) const {
  for (std::uint32_t id : tokens_) {
    if (id >= vocab) {
      throw InputError("token id " + std::to_string(id) + " is outside the vocabulary of " + std::to_string(vocab));
    }
  }
}

TokenBatch TokenStream::sample_batch(std::size_t batch, std::size_t seq_len, Rng& rng) const {
  if (tokens_.size() < seq_len) {
    throw InputError("token stream of " + std::to_string(tokens_.size()) + " ids is shorter than sequence length " +
                     std::to_string(seq_len));
  }
  TokenBatch b;
  b.batch = batch;
  b.seq_len = seq_len;
  b.ids.reserve(batch * seq_len);
  const std::size_t starts = tokens_.size() - seq_len + 1;
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t off = static_cast<std::size_t>(rng.uniform_int(starts));
    b.ids.insert(b.ids.end(), tokens_.begin() + static_cast<std::ptrdiff_t>(off),
                 tokens_.begin() + static_cast<std::ptrdiff_t>(off + seq_len));
  }
  return b;
}

TokenBatch TokenStream::sequential_batch(std::size_t index, std::size_t batch, std::size_t seq_len) const {
  if (tokens_.size() < seq_len) {
    throw InputError("token stream of " + std::to_string(tokens_.size()) + " ids is shorter than sequence length " +
                     std::to_string(seq_len));
  }
  const std::size_t windows = tokens_.size() / seq_len;
  TokenBatch b;
  b.batch = batch;
  b.seq_len = seq_len;
  b.ids.reserve(batch * seq_len);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::size_t w = (index * batch + i) % windows;
    b.ids.insert(b.ids.end(), tokens_.begin() + static_cast<std::ptrdiff_t>(w * seq_len),
                 tokens_.begin() + static_cast<std::ptrdiff_t>((w + 1) * seq_len));
  }
  return b;
}

void write_token_file(const std::string& path, const TokenBatch& sequences) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write token file '" + path + "'");
  for (std::size_t s = 0; s < sequences.batch; ++s) {
    for (std::size_t i = 0; i < sequences.seq_len; ++i) {
      if (i) out << ' ';
      out << sequences.ids[s * sequences.seq_len + i];
    }
    out << '\n';
  }
  if (!out) throw InputError("error while writing token file '" + path + "'");
}

TokenBatch sample_from_model(const ToyModel& model, std::size_t batch, std::size_t seq_len, Rng& rng) {
  if (!model.causal) throw UsageError("sampling requires a causal model");
  const std::size_t vocab = model.vocab();
  TokenBatch out;
  out.batch = batch;
  out.seq_len = seq_len;
  out.ids.reserve(batch * seq_len);
  for (std::size_t s = 0; s < batch; ++s) {
    std::vector<std::uint32_t> seq{static_cast<std::uint32_t>(rng.uniform_int(vocab))};
    while (seq.size() < seq_len) {
      const Tensor hidden = run_to_layer(TokenBatch::single(seq), model, model.num_layers(), PrecisionConfig::full());
      const Tensor logits = model_head(slice_rows(hidden, hidden.rows() - 1, 1), model);
      const auto last = logits.row(0);
      double mx = last[0];
      for (float v : last) mx = std::max(mx, static_cast<double>(v));
      std::vector<double> cdf(vocab);
      double total = 0.0;
      for (std::size_t j = 0; j < vocab; ++j) {
        total += std::exp(static_cast<double>(last[j]) - mx);
        cdf[j] = total;
      }
      const double u = rng.uniform() * total;
      std::size_t pick = 0;
      while (pick + 1 < vocab && cdf[pick] <= u) ++pick;
      seq.push_back(static_cast<std::uint32_t>(pick));
    }
    out.ids.insert(out.ids.end(), seq.begin(), seq.end());
  }
  return out;
}

}  // namespace zq
