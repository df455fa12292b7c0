// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "reference_block.hpp"

#include <cmath>
#include <limits>

namespace zq::testing {

RefMatrix to_ref(const Tensor& t) {
  RefMatrix m;
  m.rows = t.rows();
  m.cols = t.cols();
  m.v.assign(t.data().begin(), t.data().end());
  return m;
}

const std::array<std::string, kNumParams>& param_names() {
  static const std::array<std::string, kNumParams> names = {
      "w_q", "w_k", "w_v", "w_o", "w_h4h", "w_4hh", "b_q", "b_k",
      "b_v", "b_o", "b_h4h", "b_4hh", "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"};
  return names;
}

std::array<const Tensor*, kNumParams> params_of(const BlockWeights& b) {
  return {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_h4h, &b.w_4hh, &b.b_q, &b.b_k,
          &b.b_v, &b.b_o, &b.b_h4h, &b.b_4hh, &b.ln1_gamma, &b.ln1_beta, &b.ln2_gamma, &b.ln2_beta};
}

RefBlock to_ref(const BlockWeights& b) {
  RefBlock r;
  const auto ps = params_of(b);
  for (std::size_t i = 0; i < kNumParams; ++i) r.p[i] = to_ref(*ps[i]);
  r.num_heads = b.num_heads;
  return r;
}

RefMatrix ref_matmul_nt(const RefMatrix& a, const RefMatrix& b) {
  RefMatrix c{a.rows, b.rows, std::vector<double>(a.rows * b.rows, 0.0)};
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p) s += a.at(i, p) * b.at(j, p);
      c.at(i, j) = s;
    }
  return c;
}

namespace {

RefMatrix dense(const RefMatrix& x, const RefMatrix& w, const RefMatrix& bias) {
  RefMatrix y = ref_matmul_nt(x, w);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) y.at(i, j) += bias.v[j];
  return y;
}

RefMatrix norm(const RefMatrix& x, const RefMatrix& gamma, const RefMatrix& beta, double eps) {
  RefMatrix y = x;
  const double n = static_cast<double>(x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= n;
    for (std::size_t j = 0; j < x.cols; ++j) {
      y.at(i, j) = (x.at(i, j) - mean) / std::sqrt(var + eps) * gamma.v[j] + beta.v[j];
    }
  }
  return y;
}

}  // namespace

RefMatrix ref_block_forward(const RefMatrix& x, const RefBlock& b, std::size_t seq_len, bool causal, double eps,
                            RefMatrix* pre_ln2) {
  const auto& P = b.p;
  const std::size_t d = x.cols;
  const std::size_t dh = d / b.num_heads;
  const RefMatrix q = dense(x, P[0], P[6]);
  const RefMatrix k = dense(x, P[1], P[7]);
  const RefMatrix v = dense(x, P[2], P[8]);
  RefMatrix ctx{x.rows, d, std::vector<double>(x.rows * d, 0.0)};
  for (std::size_t s0 = 0; s0 < x.rows; s0 += seq_len) {
    for (std::size_t h = 0; h < b.num_heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        std::vector<double> score(seq_len, -std::numeric_limits<double>::infinity());
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (causal && j > i) continue;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q.at(s0 + i, h * dh + c) * k.at(s0 + j, h * dh + c);
          score[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, score[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq_len; ++j) z += std::isinf(score[j]) ? 0.0 : std::exp(score[j] - mx);
        for (std::size_t j = 0; j < seq_len; ++j) {
          if (std::isinf(score[j])) continue;
          const double pj = std::exp(score[j] - mx) / z;
          for (std::size_t c = 0; c < dh; ++c) ctx.at(s0 + i, h * dh + c) += pj * v.at(s0 + j, h * dh + c);
        }
      }
    }
  }
  RefMatrix r1 = dense(ctx, P[3], P[9]);
  for (std::size_t i = 0; i < r1.v.size(); ++i) r1.v[i] += x.v[i];
  const RefMatrix h1 = norm(r1, P[12], P[13], eps);
  RefMatrix u = dense(h1, P[4], P[10]);
  for (double& e : u.v) e = 0.5 * e * (1.0 + std::erf(e / std::sqrt(2.0)));
  RefMatrix r2 = dense(u, P[5], P[11]);
  for (std::size_t i = 0; i < r2.v.size(); ++i) r2.v[i] += h1.v[i];
  if (pre_ln2) *pre_ln2 = r2;
  return norm(r2, P[14], P[15], eps);
}

double ref_mse(const RefMatrix& y, const RefMatrix& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.v.size(); ++i) s += (y.v[i] - target.v[i]) * (y.v[i] - target.v[i]);
  return s / static_cast<double>(y.v.size());
}

}  // namespace zq::testing
