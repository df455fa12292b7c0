// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "zq/tensor.hpp"

namespace zq {

// Uniform symmetric quantization over the restricted integer range
// [-(2^(bits-1) - 1), 2^(bits-1) - 1]. Supported widths are 4 and 8 bits;
// 4-bit values are stored one per byte.

void check_bits(int bits);

constexpr int qmax_for_bits(int bits) { return (1 << (bits - 1)) - 1; }

/// max|x| / (2^(bits-1) - 1), or 1.0 when every value is zero.
float compute_scale(std::span<const float> values, int bits);

/// Round-half-away-from-zero of x / scale, clamped to the restricted range.
std::int8_t quantize_value(float x, float scale, int bits);

inline float dequantize_value(int q, float scale) { return static_cast<float>(q) * scale; }

enum class Granularity { PerTensor, PerGroup, PerToken };
enum class ScaleMode { Dynamic, Static };

/// Declarative description of one quantizer. PerGroup is a weight scheme,
/// PerToken an activation scheme.
struct QuantSpec {
  int bits = 8;
  Granularity granularity = Granularity::PerTensor;
  std::size_t groups = 1;
  ScaleMode mode = ScaleMode::Dynamic;

  void validate_for_weights() const;
  void validate_for_activations() const;
};

struct GroupSpan {
  std::size_t start = 0;
  std::size_t count = 0;
  bool operator==(const GroupSpan&) const = default;
};

/// Splits `rows` into `groups` contiguous spans of floor(rows / groups);
/// the remainder joins the last span.
std::vector<GroupSpan> partition_rows(std::size_t rows, std::size_t groups);

/// True when every group holds a multiple of `tile` rows.
bool is_hw_aligned(std::span<const GroupSpan> layout, std::size_t tile = 16);

/// Weight matrix [rows x cols] stored output-major with one scale per row group.
struct QuantizedMatrix {
  std::vector<std::int8_t> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 8;
  std::vector<float> group_scales;
  std::vector<GroupSpan> group_layout;

  std::size_t num_groups() const { return group_layout.size(); }
  std::size_t group_of(std::size_t row) const;
  float row_scale(std::size_t row) const { return group_scales[group_of(row)]; }
  std::int8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

  /// Payload bits plus 32 bits per group scale.
  std::uint64_t logical_bits() const;

  Tensor dequantize() const;

  /// Throws InvariantError if the range, layout or scale rules are broken.
  void validate() const;

  bool operator==(const QuantizedMatrix&) const = default;
};

QuantizedMatrix quantize_weight_groupwise(const Tensor& w, std::size_t groups, int bits);

/// Per-token scales (dynamic) or one calibrated scale (static).
using ActivationScales = std::variant<std::vector<float>, float>;

struct QuantizedActivation {
  std::vector<std::int8_t> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bits = 8;
  ActivationScales scales;

  bool is_static() const { return std::holds_alternative<float>(scales); }
  float scale_for_row(std::size_t row) const;
  std::int8_t at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  Tensor dequantize() const;
};

QuantizedActivation quantize_activation_tokenwise(const Tensor& x, int bits);
QuantizedActivation quantize_activation_static(const Tensor& x, float scale, int bits);

/// Running min/max with momentum: new = m * old + (1 - m) * batch_extreme.
/// The first observation initializes the range directly.
class Calibrator {
 public:
  explicit Calibrator(float momentum = 0.95f);

  void observe(const Tensor& x);
  void observe(std::span<const float> values);

  /// Symmetric scale max(|x_max|, |x_min|) / (2^(bits-1) - 1); 1.0 for a zero range.
  float finalize(int bits) const;

  float x_max() const { return x_max_; }
  float x_min() const { return x_min_; }
  float momentum() const { return momentum_; }
  std::size_t observed_batches() const { return observed_; }

 private:
  float x_max_ = 0.0f;
  float x_min_ = 0.0f;
  float momentum_;
  std::size_t observed_ = 0;
};

}  // namespace zq
