// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "zq/transformer.hpp"

namespace zq::detail {

// Intermediates of one block forward pass, kept for the hand-written
// backward pass. "*_in" tensors are GeMM inputs as the GeMM saw them, i.e.
// dequantized when the activation was quantized.
struct BlockTape {
  Tensor qkv_in;
  Tensor q, k, v;
  std::vector<Tensor> probs;  // (sequence, head) major, each [t x t]
  Tensor o_in;
  Tensor ln1_xhat;
  std::vector<double> ln1_rstd;
  Tensor h1;
  Tensor h4h_in;
  Tensor pre_gelu;
  Tensor fourhh_in;
  Tensor ln2_xhat;
  std::vector<double> ln2_rstd;
  Tensor out;

  // Effective (dequantized) weights used by the forward pass.
  Tensor w_q, w_k, w_v, w_o, w_h4h, w_4hh;

  std::size_t seq_len = 0;
  std::size_t num_heads = 1;
};

Tensor forward_block(const Tensor& x, const QuantizedBlock& block, const PrecisionConfig& precision,
                     const ForwardOptions& options, BlockTape* tape);

}  // namespace zq::detail
