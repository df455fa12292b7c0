// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <span>

namespace zq::testing {

double GradCheck::worst() const {
  double w = 0.0;
  for (const TensorCheck& t : tensors) w = std::max(w, t.max_rel_err);
  return w;
}

namespace {

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::fabs(e));
  return m;
}

TensorCheck compare(const std::string& name, const std::vector<double>& fd, std::span<const float> analytic,
                    double tiny) {
  TensorCheck c;
  c.name = name;
  c.entries = fd.size();
  c.max_abs_fd = max_abs(fd);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double a = analytic[i];
    const double denom = std::max({std::fabs(a), std::fabs(fd[i]), tiny, 1e-300});
    c.max_rel_err = std::max(c.max_rel_err, std::fabs(a - fd[i]) / denom);
  }
  return c;
}

}  // namespace

GradCheck check_block_gradients(const BlockWeights& block, const Tensor& x, const Tensor& target, std::size_t seq_len,
                                bool causal, const LossAndGradients& analytic, double step, double floor) {
  RefBlock ref = to_ref(block);
  RefMatrix rx = to_ref(x);
  const RefMatrix rt = to_ref(target);
  auto loss = [&] { return ref_mse(ref_block_forward(rx, ref, seq_len, causal), rt); };
  auto central = [&](std::vector<double>& values) {
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double keep = values[i];
      values[i] = keep + step;
      const double up = loss();
      values[i] = keep - step;
      const double down = loss();
      values[i] = keep;
      g[i] = (up - down) / (2.0 * step);
    }
    return g;
  };

  std::vector<std::vector<double>> fd;
  for (std::size_t p = 0; p < kNumParams; ++p) fd.push_back(central(ref.p[p].v));
  fd.push_back(central(rx.v));
  double scale = 0.0;
  for (const auto& f : fd) scale = std::max(scale, max_abs(f));

  GradCheck out;
  const auto grads = params_of(analytic.grads);
  for (std::size_t p = 0; p < kNumParams; ++p) {
    out.tensors.push_back(compare(param_names()[p], fd[p], grads[p]->data(), floor * scale));
  }
  out.tensors.push_back(compare("input", fd[kNumParams], analytic.input_grad.data(), floor * scale));
  return out;
}

}  // namespace zq::testing
