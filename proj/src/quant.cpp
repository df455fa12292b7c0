// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/quant.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "zq/error.hpp"

namespace zq {

void check_bits(int bits) {
  if (bits != 4 && bits != 8) {
    throw UsageError("unsupported quantization width " + std::to_string(bits) + " (expected 4 or 8)");
  }
}

float compute_scale(std::span<const float> values, int bits) {
  check_bits(bits);
  if (values.empty()) throw UsageError("compute_scale: empty slice");
  float max_abs = 0.0f;
  for (float v : values) max_abs = std::max(max_abs, std::fabs(v));
  if (max_abs == 0.0f) return 1.0f;
  return max_abs / static_cast<float>(qmax_for_bits(bits));
}

std::int8_t quantize_value(float x, float scale, int bits) {
  if (!std::isfinite(x)) throw ValueError("quantize_value: non-finite input");
  if (!(scale > 0.0f)) throw UsageError("quantize_value: scale must be positive");
  const int qmax = qmax_for_bits(bits);
  // std::round rounds halfway cases away from zero.
  const double q = std::round(static_cast<double>(x) / static_cast<double>(scale));
  return static_cast<std::int8_t>(std::clamp(q, static_cast<double>(-qmax), static_cast<double>(qmax)));
}

void QuantSpec::validate_for_weights() const {
  check_bits(bits);
  if (granularity == Granularity::PerToken) throw UsageError("per-token granularity applies to activations only");
  if (granularity == Granularity::PerGroup && groups < 1) throw UsageError("group count must be >= 1");
  if (mode != ScaleMode::Dynamic) throw UsageError("weights are quantized once; static mode applies to activations");
}

void QuantSpec::validate_for_activations() const {
  check_bits(bits);
  if (granularity == Granularity::PerGroup) throw UsageError("per-group granularity applies to weights only");
  if (mode == ScaleMode::Static && granularity == Granularity::PerToken) {
    throw UsageError("static activation scales are per-tensor");
  }
}

std::vector<GroupSpan> partition_rows(std::size_t rows, std::size_t groups) {
  if (groups < 1 || groups > rows) {
    throw UsageError("group count " + std::to_string(groups) + " must lie in [1, " + std::to_string(rows) + "]");
  }
  const std::size_t base = rows / groups;
  std::vector<GroupSpan> layout;
  layout.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) layout.push_back({g * base, base});
  layout.back().count = rows - layout.back().start;
  return layout;
}

bool is_hw_aligned(std::span<const GroupSpan> layout, std::size_t tile) {
  return std::all_of(layout.begin(), layout.end(), [tile](const GroupSpan& g) { return g.count % tile == 0; });
}

std::size_t QuantizedMatrix::group_of(std::size_t row) const {
  // Layout is contiguous and sorted; all but the last group share one size.
  if (group_layout.empty() || row >= rows) throw InvariantError("group_of: row outside the group layout");
  const std::size_t base = group_layout.front().count;
  return std::min(row / base, group_layout.size() - 1);
}

std::uint64_t QuantizedMatrix::logical_bits() const {
  return static_cast<std::uint64_t>(rows) * cols * static_cast<std::uint64_t>(bits) + 32ULL * num_groups();
}

Tensor QuantizedMatrix::dequantize() const {
  Tensor w({rows, cols});
  for (std::size_t gi = 0; gi < group_layout.size(); ++gi) {
    const GroupSpan& g = group_layout[gi];
    const float s = group_scales[gi];
    for (std::size_t r = g.start; r < g.start + g.count; ++r)
      for (std::size_t c = 0; c < cols; ++c) w(r, c) = dequantize_value(at(r, c), s);
  }
  return w;
}

void QuantizedMatrix::validate() const {
  check_bits(bits);
  if (values.size() != rows * cols) throw InvariantError("quantized matrix payload does not match its shape");
  if (group_scales.size() != group_layout.size() || group_layout.empty()) {
    throw InvariantError("quantized matrix needs exactly one scale per group");
  }
  std::size_t next = 0;
  for (const GroupSpan& g : group_layout) {
    if (g.start != next || g.count == 0) throw InvariantError("group layout is not a contiguous partition of the rows");
    next += g.count;
  }
  if (next != rows) throw InvariantError("group layout does not cover every row");
  const std::size_t base = group_layout.front().count;
  for (std::size_t i = 0; i + 1 < group_layout.size(); ++i) {
    if (group_layout[i].count != base) throw InvariantError("only the last group may differ in size");
  }
  if (group_layout.back().count < base) throw InvariantError("last group is smaller than the base group size");
  const int qmax = qmax_for_bits(bits);
  for (std::int8_t v : values) {
    if (v < -qmax || v > qmax) throw InvariantError("quantized value outside the restricted symmetric range");
  }
  for (float s : group_scales) {
    if (!(s > 0.0f) || !std::isfinite(s)) throw InvariantError("group scales must be positive and finite");
  }
}

QuantizedMatrix quantize_weight_groupwise(const Tensor& w, std::size_t groups, int bits) {
  check_bits(bits);
  if (w.rank() != 2) throw DimensionError("quantize_weight_groupwise: expected a matrix, got " + w.shape_string());
  QuantizedMatrix q;
  q.rows = w.rows();
  q.cols = w.cols();
  q.bits = bits;
  q.group_layout = partition_rows(q.rows, groups);
  q.values.resize(w.size());
  q.group_scales.reserve(groups);
  for (const GroupSpan& g : q.group_layout) {
    const auto block = w.data().subspan(g.start * q.cols, g.count * q.cols);
    const float s = compute_scale(block, bits);
    q.group_scales.push_back(s);
    for (std::size_t i = 0; i < block.size(); ++i) q.values[g.start * q.cols + i] = quantize_value(block[i], s, bits);
  }
  return q;
}

float QuantizedActivation::scale_for_row(std::size_t row) const {
  if (const float* s = std::get_if<float>(&scales)) return *s;
  const auto& per_token = std::get<std::vector<float>>(scales);
  if (row >= per_token.size()) throw InvariantError("missing activation scale for token " + std::to_string(row));
  return per_token[row];
}

Tensor QuantizedActivation::dequantize() const {
  Tensor x({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const float s = scale_for_row(r);
    for (std::size_t c = 0; c < cols; ++c) x(r, c) = dequantize_value(at(r, c), s);
  }
  return x;
}

QuantizedActivation quantize_activation_tokenwise(const Tensor& x, int bits) {
  check_bits(bits);
  if (x.rank() != 2) throw DimensionError("quantize_activation_tokenwise: expected [tokens x dim], got " + x.shape_string());
  QuantizedActivation q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.bits = bits;
  q.values.resize(x.size());
  std::vector<float> token_scales(q.rows);
  for (std::size_t r = 0; r < q.rows; ++r) {
    const auto row = x.row(r);
    const float s = compute_scale(row, bits);
    token_scales[r] = s;
    for (std::size_t c = 0; c < q.cols; ++c) q.values[r * q.cols + c] = quantize_value(row[c], s, bits);
  }
  q.scales = std::move(token_scales);
  return q;
}

QuantizedActivation quantize_activation_static(const Tensor& x, float scale, int bits) {
  check_bits(bits);
  if (!(scale > 0.0f) || !std::isfinite(scale)) throw UsageError("quantize_activation_static: scale must be positive");
  if (x.rank() != 2) throw DimensionError("quantize_activation_static: expected [tokens x dim], got " + x.shape_string());
  QuantizedActivation q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.bits = bits;
  q.values.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) q.values[i] = quantize_value(x[i], scale, bits);
  q.scales = scale;
  return q;
}

Calibrator::Calibrator(float momentum) : momentum_(momentum) {
  if (!(momentum > 0.0f && momentum < 1.0f)) throw UsageError("calibrator momentum must lie in (0, 1)");
}

void Calibrator::observe(const Tensor& x) { observe(x.data()); }

void Calibrator::observe(std::span<const float> values) {
  if (values.empty()) throw UsageError("calibrator: empty batch");
  float lo = values.front(), hi = values.front();
  for (float v : values) {
    if (!std::isfinite(v)) throw ValueError("calibrator: non-finite activation");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (observed_ == 0) {
    x_max_ = hi;
    x_min_ = lo;
  } else {
    const double m = momentum_;
    x_max_ = static_cast<float>(m * x_max_ + (1.0 - m) * hi);
    x_min_ = static_cast<float>(m * x_min_ + (1.0 - m) * lo);
  }
  ++observed_;
}

float Calibrator::finalize(int bits) const {
  check_bits(bits);
  if (observed_ == 0) throw UsageError("calibrator: finalize called before any observation");
  const float range = std::max(std::fabs(x_max_), std::fabs(x_min_));
  if (range == 0.0f) return 1.0f;
  return range / static_cast<float>(qmax_for_bits(bits));
}

}  // namespace zq
