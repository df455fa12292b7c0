// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "zq/quant.hpp"
#include "zq/tensor.hpp"

namespace zq {

/// Exact INT32 accumulator [tokens x outputs].
struct IntAccumulator {
  std::vector<std::int32_t> acc;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::int32_t at(std::size_t r, std::size_t c) const { return acc[r * cols + c]; }
  bool operator==(const IntAccumulator&) const = default;
};

/// Throws ConfigError unless depth * qmax(act) * qmax(weight) < 2^31, which
/// guarantees the accumulator cannot overflow.
void check_accumulator_bound(std::size_t depth, int act_bits, int weight_bits);

/// acc[i][j] = sum_p xq[i][p] * wq[j][p] in exact integer arithmetic.
/// The weight is output-major, so output j reads weight row j.
IntAccumulator igemm(const QuantizedActivation& xq, const QuantizedMatrix& wq);

/// out[i][j] = acc[i][j] * act_scale(i) * group_scale(group_of(j)) + bias[j].
/// Produces the float output straight from the accumulator in one pass.
/// `bias` may be empty.
Tensor dequant_epilogue(const IntAccumulator& acc, const ActivationScales& act_scales, const QuantizedMatrix& w,
                        const Tensor& bias);

struct FullActivation {};
struct DynamicActivation {
  int bits = 8;
};
struct StaticActivation {
  float scale = 1.0f;
  int bits = 8;
};

/// How the input of a GeMM is treated: left in float (the A16 path),
/// quantized per token, or quantized with one calibrated scale.
using ActMode = std::variant<FullActivation, DynamicActivation, StaticActivation>;

/// Quantize-on-the-fly activation according to `mode`; FullActivation is
/// rejected since it has no integer form.
QuantizedActivation quantize_activation(const Tensor& x, const ActMode& mode);

/// Fused integer linear layer: igemm followed by the dequantization epilogue.
Tensor quantized_linear(const QuantizedActivation& xq, const QuantizedMatrix& w, const Tensor& bias);

/// quantize -> igemm -> epilogue for quantized activation modes; for
/// FullActivation the weight is dequantized and a float GeMM is run.
Tensor quantized_linear(const Tensor& x, const QuantizedMatrix& w, const Tensor& bias, const ActMode& mode);

// Quantize-on-write variants of the producers that feed GeMM inputs. Each is
// value-identical to quantize_activation_tokenwise(op(x), bits).
QuantizedActivation layer_norm_quantized(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                                         int bits);
QuantizedActivation gelu_quantized(const Tensor& x, int bits);

}  // namespace zq
