// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "zq/rng.hpp"

namespace zq {

/// Dense row-major float32 tensor.
///
/// A default-constructed tensor is empty (no shape, no data). Every tensor
/// built with a shape has all dimensions >= 1 and exactly product(shape)
/// elements.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor({n}); }
  static Tensor filled(std::vector<std::size_t> shape, float value);
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor from_values(std::initializer_list<float> values);
  static Tensor identity(std::size_t n);
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, float stddev = 1.0f);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Matrix view helpers: rank-1 tensors behave as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* raw() { return data_.data(); }
  const float* raw() const { return data_.data(); }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<float> row(std::size_t r);
  std::span<const float> row(std::size_t r) const;

  std::string shape_string() const;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// c = a * b with a fixed left-to-right float accumulation over the inner
/// dimension, so results are reproducible bit-for-bit.
Tensor matmul(const Tensor& a, const Tensor& b);

/// c = a * b^T; b is stored output-major (one row per output column).
/// Same accumulation order as `matmul(a, transpose(b))`.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// c = a^T * b.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

/// y = x * w^T + bias, the float reference for every weight GeMM.
/// `bias` may be empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

/// Per-row layer normalization with population variance.
/// A row with zero variance and eps == 0 maps to beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps);
/// Normalizes a single row; shared by layer_norm and its quantize-on-write variant.
void layer_norm_row(std::span<const float> in, std::span<float> out, const Tensor& gamma, const Tensor& beta,
                    float eps);

/// Exact GeLU, x * Phi(x) with Phi computed through erf.
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);
double gelu_derivative(double x);

/// Softmax over the last axis with max subtraction. Entries equal to -inf
/// are treated as masked and receive probability 0.
Tensor softmax(const Tensor& x);

/// Sets entries above the diagonal of a square score matrix to -inf.
void apply_causal_mask(Tensor& scores);

/// Columns [begin, begin + count) of a matrix.
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);
/// Rows [begin, begin + count) of a matrix.
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count);
void write_cols(Tensor& dst, const Tensor& src, std::size_t begin);
void write_rows(Tensor& dst, const Tensor& src, std::size_t begin);

double mean_squared_error(const Tensor& a, const Tensor& b);
/// ||a - b||_2 / ||b||_2; returns ||a||_2 when b is all zeros.
double relative_l2(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);

}  // namespace zq
