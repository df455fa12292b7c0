// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/igemm.hpp"

#include <cstdint>
#include <string>

#include "zq/error.hpp"

namespace zq {

void check_accumulator_bound(std::size_t depth, int act_bits, int weight_bits) {
  check_bits(act_bits);
  check_bits(weight_bits);
  const unsigned __int128 worst = static_cast<unsigned __int128>(depth) *
                                  static_cast<unsigned>(qmax_for_bits(act_bits)) *
                                  static_cast<unsigned>(qmax_for_bits(weight_bits));
  if (worst >= (static_cast<unsigned __int128>(1) << 31)) {
    throw ConfigError("igemm: reduction depth " + std::to_string(depth) + " can overflow the INT32 accumulator for " +
                      std::to_string(act_bits) + "x" + std::to_string(weight_bits) + "-bit operands");
  }
}

IntAccumulator igemm(const QuantizedActivation& xq, const QuantizedMatrix& wq) {
  if (xq.cols != wq.cols) {
    throw DimensionError("igemm: activation [" + std::to_string(xq.rows) + "x" + std::to_string(xq.cols) +
                         "] does not match weight [" + std::to_string(wq.rows) + "x" + std::to_string(wq.cols) + "]");
  }
  check_accumulator_bound(xq.cols, xq.bits, wq.bits);
  IntAccumulator out;
  out.rows = xq.rows;
  out.cols = wq.rows;
  out.acc.assign(out.rows * out.cols, 0);
  const std::size_t depth = xq.cols;
  for (std::size_t i = 0; i < out.rows; ++i) {
    const std::int8_t* x = xq.values.data() + i * depth;
    for (std::size_t j = 0; j < out.cols; ++j) {
      const std::int8_t* w = wq.values.data() + j * depth;
      std::int32_t sum = 0;
      for (std::size_t p = 0; p < depth; ++p) sum += static_cast<std::int32_t>(x[p]) * static_cast<std::int32_t>(w[p]);
      out.acc[i * out.cols + j] = sum;
    }
  }
  return out;
}

Tensor dequant_epilogue(const IntAccumulator& acc, const ActivationScales& act_scales, const QuantizedMatrix& w,
                        const Tensor& bias) {
  if (acc.cols != w.rows) throw DimensionError("dequant_epilogue: accumulator width does not match weight rows");
  if (const auto* per_token = std::get_if<std::vector<float>>(&act_scales); per_token && per_token->size() != acc.rows) {
    throw InvariantError("dequant_epilogue: " + std::to_string(per_token->size()) + " token scales for " +
                         std::to_string(acc.rows) + " tokens");
  }
  if (w.group_scales.size() != w.group_layout.size() || w.group_layout.empty()) {
    throw InvariantError("dequant_epilogue: weight group scales do not cover the group layout");
  }
  if (!bias.empty() && bias.size() != acc.cols) throw DimensionError("dequant_epilogue: bias does not match output width");

  std::vector<double> out_scale(acc.cols);
  for (std::size_t j = 0; j < acc.cols; ++j) out_scale[j] = w.row_scale(j);

  Tensor out({acc.rows, acc.cols});
  for (std::size_t i = 0; i < acc.rows; ++i) {
    const double a = std::holds_alternative<float>(act_scales) ? std::get<float>(act_scales)
                                                              : std::get<std::vector<float>>(act_scales)[i];
    auto row = out.row(i);
    for (std::size_t j = 0; j < acc.cols; ++j) {
      row[j] = static_cast<float>(static_cast<double>(acc.at(i, j)) * (a * out_scale[j]));
      if (!bias.empty()) row[j] += bias[j];
    }
  }
  return out;
}

QuantizedActivation quantize_activation(const Tensor& x, const ActMode& mode) {
  if (const auto* d = std::get_if<DynamicActivation>(&mode)) return quantize_activation_tokenwise(x, d->bits);
  if (const auto* s = std::get_if<StaticActivation>(&mode)) return quantize_activation_static(x, s->scale, s->bits);
  throw UsageError("quantize_activation: full-precision activations have no integer form");
}

Tensor quantized_linear(const QuantizedActivation& xq, const QuantizedMatrix& w, const Tensor& bias) {
  return dequant_epilogue(igemm(xq, w), xq.scales, w, bias);
}

Tensor quantized_linear(const Tensor& x, const QuantizedMatrix& w, const Tensor& bias, const ActMode& mode) {
  if (std::holds_alternative<FullActivation>(mode)) return linear(x, w.dequantize(), bias);
  return quantized_linear(quantize_activation(x, mode), w, bias);
}

QuantizedActivation layer_norm_quantized(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps,
                                         int bits) {
  check_bits(bits);
  if (!(eps >= 0.0f)) throw UsageError("layer_norm_quantized: eps must be non-negative");
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw DimensionError("layer_norm_quantized: gamma/beta do not match input " + x.shape_string());
  }
  QuantizedActivation q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.bits = bits;
  q.values.resize(x.size());
  std::vector<float> scales(q.rows);
  std::vector<float> normalized(q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    layer_norm_row(x.row(r), normalized, gamma, beta, eps);
    scales[r] = compute_scale(normalized, bits);
    for (std::size_t c = 0; c < q.cols; ++c) q.values[r * q.cols + c] = quantize_value(normalized[c], scales[r], bits);
  }
  q.scales = std::move(scales);
  return q;
}

QuantizedActivation gelu_quantized(const Tensor& x, int bits) {
  check_bits(bits);
  QuantizedActivation q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.bits = bits;
  q.values.resize(x.size());
  std::vector<float> scales(q.rows);
  std::vector<float> activated(q.cols);
  for (std::size_t r = 0; r < q.rows; ++r) {
    const auto in = x.row(r);
    for (std::size_t c = 0; c < q.cols; ++c) activated[c] = static_cast<float>(gelu_scalar(in[c]));
    scales[r] = compute_scale(activated, bits);
    for (std::size_t c = 0; c < q.cols; ++c) q.values[r * q.cols + c] = quantize_value(activated[c], scales[r], bits);
  }
  q.scales = std::move(scales);
  return q;
}

}  // namespace zq
