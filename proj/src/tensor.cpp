// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "zq/error.hpp"

namespace zq {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimension of size 0 in shape " + shape_string(shape));
  }
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " + t.shape_string());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(product(shape_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (product(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + zq::shape_string(shape_) + " needs " +
                         std::to_string(product(shape_)) + " elements, got " +
                         std::to_string(data_.size()));
  }
}

Tensor Tensor::filled(std::vector<std::size_t> shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  if (rows.size() == 0) throw DimensionError("from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<float> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), cols}, std::move(data));
}

Tensor Tensor::from_values(std::initializer_list<float> values) {
  return Tensor({values.size()}, std::vector<float>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, float stddev) {
  Tensor t(std::move(shape));
  for (float& v : t.data_) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : data_.size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<float> Tensor::row(std::size_t r) {
  return std::span<float>(data_).subspan(r * cols(), cols());
}

std::span<const float> Tensor::row(std::size_t r) const {
  return std::span<const float>(data_).subspan(r * cols(), cols());
}

std::string Tensor::shape_string() const { return zq::shape_string(shape_); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  Tensor c({m, n});
  const float* pa = a.raw();
  const float* pb = b.raw();
  float* pc = c.raw();
  // i-p-j order keeps the per-element summation strictly ordered over p.
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = pa[i * k + p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t(j, i) = a(i, j);
  return t;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + a.shape_string() + " x " +
                         b.shape_string() + "^T");
  }
  return matmul(a, transpose(b));
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dimensions differ, " + a.shape_string() + "^T x " +
                         b.shape_string());
  }
  return matmul(transpose(a), b);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  Tensor y = matmul_nt(x, w);
  if (!bias.empty()) {
    if (bias.size() != y.cols()) {
      throw DimensionError("linear: bias " + bias.shape_string() + " does not match output " +
                           y.shape_string());
    }
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto r = y.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
    }
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor c = a;
  for (float& v : c.data()) v *= factor;
  return c;
}

void layer_norm_row(std::span<const float> in, std::span<float> out, const Tensor& gamma, const Tensor& beta,
                    float eps) {
  const std::size_t d = in.size();
  double mean = 0.0;
  for (float v : in) mean += v;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (float v : in) var += (v - mean) * (v - mean);
  var /= static_cast<double>(d);
  const double denom = var + eps;
  const double rstd = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
  for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>((in[j] - mean) * rstd * gamma[j] + beta[j]);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (!(eps >= 0.0f)) throw UsageError("layer_norm: eps must be non-negative");
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + gamma.shape_string() + "/" + beta.shape_string() +
                         " do not match input " + x.shape_string());
  }
  Tensor y(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_row(x.row(r), y.row(r), gamma, beta, eps);
  return y;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(gelu_scalar(x[i]));
  return y;
}

Tensor softmax(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t n = x.cols();
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    auto out = y.row(r);
    float mx = kNegInf;
    for (float v : in) mx = std::max(mx, v);
    if (mx == kNegInf) continue;  // fully masked row stays zero
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = in[j] == kNegInf ? 0.0f : std::exp(in[j] - mx);
      sum += out[j];
    }
    const double inv = 1.0 / sum;
    for (float& v : out) v = static_cast<float>(v * inv);
  }
  return y;
}

void apply_causal_mask(Tensor& scores) {
  require_matrix(scores, "apply_causal_mask");
  constexpr float kNegInf = -std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < scores.rows(); ++i)
    for (std::size_t j = i + 1; j < scores.cols(); ++j) scores(i, j) = kNegInf;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_cols");
  if (begin + count > a.cols()) throw DimensionError("slice_cols: range exceeds " + a.shape_string());
  Tensor s({a.rows(), count});
  for (std::size_t r = 0; r < a.rows(); ++r)
    std::copy_n(a.row(r).begin() + static_cast<std::ptrdiff_t>(begin), count, s.row(r).begin());
  return s;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  require_matrix(a, "slice_rows");
  if (begin + count > a.rows()) throw DimensionError("slice_rows: range exceeds " + a.shape_string());
  const auto src = a.data().subspan(begin * a.cols(), count * a.cols());
  return Tensor({count, a.cols()}, std::vector<float>(src.begin(), src.end()));
}

void write_cols(Tensor& dst, const Tensor& src, std::size_t begin) {
  if (src.rows() != dst.rows() || begin + src.cols() > dst.cols()) {
    throw DimensionError("write_cols: " + src.shape_string() + " does not fit " + dst.shape_string());
  }
  for (std::size_t r = 0; r < src.rows(); ++r)
    std::copy(src.row(r).begin(), src.row(r).end(),
              dst.row(r).begin() + static_cast<std::ptrdiff_t>(begin));
}

void write_rows(Tensor& dst, const Tensor& src, std::size_t begin) {
  if (src.cols() != dst.cols() || begin + src.rows() > dst.rows()) {
    throw DimensionError("write_rows: " + src.shape_string() + " does not fit " + dst.shape_string());
  }
  std::copy(src.data().begin(), src.data().end(),
            dst.data().begin() + static_cast<std::ptrdiff_t>(begin * dst.cols()));
}

double mean_squared_error(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mean_squared_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double relative_l2(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "relative_l2");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace zq
