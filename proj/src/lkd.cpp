// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/lkd.hpp"

#include <array>
#include <atomic>
#include <cmath>

#include "zq/error.hpp"

namespace zq {

void LKDConfig::validate() const {
  if (!(learning_rate > 0.0f) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (batch_size == 0 || seq_len == 0) throw ConfigError("batch_size and seq_len must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("Adam betas must lie in [0, 1) and eps must be > 0");
  }
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  Rng r(seed ^ (salt * 0xD1B54A32D192ED03ULL));
  return r.next_u64();
}

}  // namespace

BatchSource::BatchSource(const DataSource& source, std::size_t vocab, std::uint64_t seed) : vocab_(vocab), rng_(seed) {
  if (const auto* r = std::get_if<RandomTokens>(&source)) {
    rng_ = Rng(mix_seed(seed, r->seed + 1));
    return;
  }
  const std::string& path = std::holds_alternative<OriginalData>(source) ? std::get<OriginalData>(source).path
                                                                         : std::get<AltCorpus>(source).path;
  stream_ = TokenStream::from_file(path);
  stream_->check_vocab(vocab);
}

TokenBatch BatchSource::next(std::size_t batch, std::size_t seq_len) {
  if (stream_) return stream_->sample_batch(batch, seq_len, rng_);
  return random_token_batch(vocab_, batch, seq_len, rng_);
}

double mse_loss(const Tensor& student, const Tensor& teacher) { return mean_squared_error(student, teacher); }

Tensor mse_loss_grad(const Tensor& student, const Tensor& teacher) {
  if (student.shape() != teacher.shape()) throw DimensionError("mse_loss_grad: shape mismatch");
  Tensor g(student.shape());
  const double k = 2.0 / static_cast<double>(student.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(k * (static_cast<double>(student[i]) - teacher[i]));
  return g;
}

double kl_loss(const Tensor& student, const Tensor& teacher) {
  if (student.shape() != teacher.shape()) throw DimensionError("kl_loss: shape mismatch");
  const Tensor p = softmax(teacher);
  const Tensor q = softmax(student);
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0f) total += p[i] * (std::log(static_cast<double>(p[i])) - std::log(std::max(1e-30, static_cast<double>(q[i]))));
  }
  return total / static_cast<double>(student.rows());
}

Tensor kl_loss_grad(const Tensor& student, const Tensor& teacher) {
  const Tensor p = softmax(teacher);
  const Tensor q = softmax(student);
  Tensor g(student.shape());
  const double inv_rows = 1.0 / static_cast<double>(student.rows());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>((static_cast<double>(q[i]) - p[i]) * inv_rows);
  return g;
}

namespace {

Tensor column_sum(const Tensor& a) {
  std::vector<double> acc(a.cols(), 0.0);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto row = a.row(r);
    for (std::size_t c = 0; c < a.cols(); ++c) acc[c] += row[c];
  }
  Tensor s({a.cols()});
  for (std::size_t c = 0; c < a.cols(); ++c) s[c] = static_cast<float>(acc[c]);
  return s;
}

// dx for y = xhat * gamma + beta with xhat = (x - mean) * rstd.
Tensor layer_norm_backward(const Tensor& dy, const Tensor& xhat, const std::vector<double>& rstd, const Tensor& gamma,
                           Tensor& d_gamma, Tensor& d_beta) {
  const std::size_t d = dy.cols();
  std::vector<double> dg(d, 0.0), db(d, 0.0);
  Tensor dx(dy.shape());
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    const auto g = dy.row(r);
    const auto xh = xhat.row(r);
    double sum = 0.0, dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dg[j] += static_cast<double>(g[j]) * xh[j];
      db[j] += g[j];
      dxhat[j] = static_cast<double>(g[j]) * gamma[j];
      sum += dxhat[j];
      dot += dxhat[j] * xh[j];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    auto out = dx.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      out[j] = static_cast<float>(rstd[r] * (dxhat[j] - sum * inv_d - xh[j] * dot * inv_d));
    }
  }
  d_gamma = Tensor({d});
  d_beta = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) {
    d_gamma[j] = static_cast<float>(dg[j]);
    d_beta[j] = static_cast<float>(db[j]);
  }
  return dx;
}

Tensor sub_block(const Tensor& src, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto s = src.row(row0 + r).subspan(col0, cols);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

void write_block(Tensor& dst, const Tensor& src, std::size_t row0, std::size_t col0) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const auto s = src.row(r);
    std::copy(s.begin(), s.end(), dst.row(row0 + r).begin() + static_cast<std::ptrdiff_t>(col0));
  }
}

std::array<Tensor*, 12> trainable(BlockWeights& b) {
  return {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_h4h, &b.w_4hh, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.b_h4h, &b.b_4hh};
}

std::array<const Tensor*, 12> trainable(const BlockWeights& b) {
  return {&b.w_q, &b.w_k, &b.w_v, &b.w_o, &b.w_h4h, &b.w_4hh, &b.b_q, &b.b_k, &b.b_v, &b.b_o, &b.b_h4h, &b.b_4hh};
}

BlockWeights zeros_like(const BlockWeights& b) {
  BlockWeights z = b;
  for (Tensor* t : trainable(z))
    for (float& v : t->data()) v = 0.0f;
  return z;
}

}  // namespace

BlockGradients backward_block(const detail::BlockTape& tape, const Tensor& ln1_gamma, const Tensor& ln2_gamma,
                              const Tensor& d_out, Tensor* d_input) {
  if (d_out.shape() != tape.out.shape()) throw DimensionError("backward_block: upstream gradient shape mismatch");
  BlockGradients g;
  g.num_heads = tape.num_heads;
  const std::size_t rows = d_out.rows();
  const std::size_t d = d_out.cols();
  const std::size_t t = tape.seq_len;
  const std::size_t heads = tape.num_heads;
  const std::size_t dh = d / heads;

  // y = LN2(h1 + f)
  const Tensor d_r2 = layer_norm_backward(d_out, tape.ln2_xhat, tape.ln2_rstd, ln2_gamma, g.ln2_gamma, g.ln2_beta);

  // f = a * W_4hh^T + b_4hh, a = gelu(u)
  g.w_4hh = matmul_tn(d_r2, tape.fourhh_in);
  g.b_4hh = column_sum(d_r2);
  Tensor d_pre = matmul(d_r2, tape.w_4hh);
  for (std::size_t i = 0; i < d_pre.size(); ++i) {
    d_pre[i] = static_cast<float>(d_pre[i] * gelu_derivative(tape.pre_gelu[i]));
  }

  // u = h1 * W_h4h^T + b_h4h
  g.w_h4h = matmul_tn(d_pre, tape.h4h_in);
  g.b_h4h = column_sum(d_pre);
  const Tensor d_h1 = add(d_r2, matmul(d_pre, tape.w_h4h));

  // h1 = LN1(x + attn)
  const Tensor d_r1 = layer_norm_backward(d_h1, tape.ln1_xhat, tape.ln1_rstd, ln1_gamma, g.ln1_gamma, g.ln1_beta);

  // attn = ctx * W_o^T + b_o
  g.w_o = matmul_tn(d_r1, tape.o_in);
  g.b_o = column_sum(d_r1);
  const Tensor d_ctx = matmul(d_r1, tape.w_o);

  Tensor dq({rows, d}), dk({rows, d}), dv({rows, d});
  const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (std::size_t s = 0; s < rows / t; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor& probs = tape.probs[s * heads + h];
      const Tensor dctx_h = sub_block(d_ctx, s * t, t, h * dh, dh);
      const Tensor qh = sub_block(tape.q, s * t, t, h * dh, dh);
      const Tensor kh = sub_block(tape.k, s * t, t, h * dh, dh);
      const Tensor vh = sub_block(tape.v, s * t, t, h * dh, dh);
      const Tensor d_probs = matmul_nt(dctx_h, vh);
      write_block(dv, matmul_tn(probs, dctx_h), s * t, h * dh);
      // Softmax backward; masked entries have zero probability and so zero gradient.
      Tensor d_scores({t, t});
      for (std::size_t i = 0; i < t; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < t; ++j) dot += static_cast<double>(probs(i, j)) * d_probs(i, j);
        for (std::size_t j = 0; j < t; ++j) {
          d_scores(i, j) = static_cast<float>(probs(i, j) * (d_probs(i, j) - dot) * inv_sqrt);
        }
      }
      write_block(dq, matmul(d_scores, kh), s * t, h * dh);
      write_block(dk, matmul_tn(d_scores, qh), s * t, h * dh);
    }
  }

  g.w_q = matmul_tn(dq, tape.qkv_in);
  g.w_k = matmul_tn(dk, tape.qkv_in);
  g.w_v = matmul_tn(dv, tape.qkv_in);
  g.b_q = column_sum(dq);
  g.b_k = column_sum(dk);
  g.b_v = column_sum(dv);

  if (d_input) {
    Tensor dx = add(matmul(dq, tape.w_q), matmul(dk, tape.w_k));
    dx = add(dx, matmul(dv, tape.w_v));
    *d_input = add(dx, d_r1);
  }
  return g;
}

LossAndGradients lkd_backward(const BlockWeights& master, const Tensor& h, const Tensor& teacher_out,
                              const PrecisionConfig& precision, const ForwardOptions& options, LossKind loss) {
  const QuantizedBlock student = quantize_block(master, precision);
  detail::BlockTape tape;
  const Tensor out = detail::forward_block(h, student, precision, options, &tape);
  LossAndGradients r;
  Tensor d_out;
  if (loss == LossKind::Mse) {
    r.loss = mse_loss(out, teacher_out);
    d_out = mse_loss_grad(out, teacher_out);
  } else {
    r.loss = kl_loss(out, teacher_out);
    d_out = kl_loss_grad(out, teacher_out);
  }
  r.grads = backward_block(tape, master.ln1_gamma, master.ln2_gamma, d_out, &r.input_grad);
  return r;
}

double lkd_layer_loss(const ToyModel& model, std::size_t layer, const TokenBatch& batch, const BlockWeights& teacher,
                      const QuantizedBlock& student, const PrecisionConfig& precision, const RunOptions& options,
                      LossKind loss) {
  if (layer >= model.num_layers()) throw UsageError("lkd_layer_loss: layer index out of range");
  const Tensor h = run_to_layer(batch, model, layer, precision, options);
  ForwardOptions fo;
  fo.causal = model.causal;
  fo.seq_len = batch.seq_len;
  const Tensor teacher_out = block_forward(h, teacher, PrecisionConfig::full(), fo);
  if (options.calibration) fo.static_scales = &(*options.calibration)[layer];
  const Tensor student_out = block_forward(h, student, precision, fo);
  return loss == LossKind::Mse ? mse_loss(student_out, teacher_out) : kl_loss(student_out, teacher_out);
}

namespace {
std::atomic<std::size_t> g_live_masters{0};
}

MasterWeights::MasterWeights(const BlockWeights& original, OptimizerKind optimizer)
    : weights_(original), optimizer_(optimizer) {
  if (optimizer_ == OptimizerKind::Adam) {
    first_moment_ = zeros_like(original);
    second_moment_ = zeros_like(original);
  }
  ++g_live_masters;
}

MasterWeights::~MasterWeights() { --g_live_masters; }

std::size_t MasterWeights::live_count() { return g_live_masters.load(); }

void MasterWeights::step(const BlockGradients& grads, const LKDConfig& config) {
  ++steps_;
  const auto params = trainable(weights_);
  const auto g = trainable(grads);
  const double lr = config.learning_rate;
  if (optimizer_ == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i]->size(); ++j)
        (*params[i])[j] = static_cast<float>((*params[i])[j] - lr * (*g[i])[j]);
    return;
  }
  const auto m = trainable(first_moment_);
  const auto v = trainable(second_moment_);
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i]->size(); ++j) {
      const double gj = (*g[i])[j];
      const double mj = b1 * (*m[i])[j] + (1.0 - b1) * gj;
      const double vj = b2 * (*v[i])[j] + (1.0 - b2) * gj * gj;
      (*m[i])[j] = static_cast<float>(mj);
      (*v[i])[j] = static_cast<float>(vj);
      const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + config.adam_eps);
      (*params[i])[j] = static_cast<float>((*params[i])[j] - update);
    }
  }
}

namespace {

QuantizedBlock seal(const BlockWeights& weights, const PrecisionConfig& precision, const SiteScales* static_scales) {
  QuantizedBlock q = quantize_block(weights, precision);
  if (precision.activation_static && static_scales) q.static_scales = *static_scales;
  return q;
}

}  // namespace

LayerResult lkd_quantize_layer(const ToyModel& model, std::size_t layer, const LKDConfig& config,
                               const PrecisionConfig& precision, const CalibrationTable* calibration,
                               const LkdObserver& observer) {
  config.validate();
  precision.validate();
  if (layer >= model.num_layers()) throw UsageError("lkd_quantize_layer: layer index out of range");
  if (model.quantized_prefix() != layer || model.is_quantized(layer)) {
    throw UsageError("lkd_quantize_layer: blocks before layer " + std::to_string(layer) +
                     " must be sealed and the layer itself must be full precision");
  }
  if (precision.activation_static && (!calibration || calibration->size() != model.num_layers())) {
    throw UsageError("static activation quantization requires a calibration table for every layer");
  }
  // Opening the source first surfaces unreadable data before any compute.
  BatchSource source(config.data_source, model.vocab(), mix_seed(config.seed, layer));

  const BlockWeights& teacher = std::get<BlockWeights>(model.blocks[layer]);
  const SiteScales* static_scales = calibration ? &(*calibration)[layer] : nullptr;
  RunOptions run_opts;
  run_opts.calibration = calibration;

  LayerResult result;
  if (config.iterations == 0) {
    result.sealed = seal(teacher, precision, static_scales);
    return result;
  }

  ForwardOptions fo;
  fo.causal = model.causal;
  fo.seq_len = config.seq_len;
  ForwardOptions student_fo = fo;
  student_fo.static_scales = static_scales;

  MasterWeights master(teacher, config.optimizer);
  Tensor probe_h, probe_teacher;
  result.loss_history.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const TokenBatch batch = source.next(config.batch_size, config.seq_len);
    Tensor h = run_to_layer(batch, model, layer, precision, run_opts);
    Tensor teacher_out = block_forward(h, teacher, PrecisionConfig::full(), fo);
    const LossAndGradients lg = lkd_backward(master.weights(), h, teacher_out, precision, student_fo, config.loss);
    result.loss_history.push_back(lg.loss);
    if (it == 0) {
      result.initial_loss = lg.loss;
      probe_h = std::move(h);
      probe_teacher = std::move(teacher_out);
    }
    master.step(lg.grads, config);
    if (observer) observer({layer, it, lg.loss});
  }
  result.sealed = seal(master.weights(), precision, static_scales);
  const Tensor sealed_out = block_forward(probe_h, result.sealed, precision, student_fo);
  result.final_loss =
      config.loss == LossKind::Mse ? mse_loss(sealed_out, probe_teacher) : kl_loss(sealed_out, probe_teacher);
  return result;
}

LKDReport lkd_quantize_model(ToyModel& model, const LKDConfig& config, const PrecisionConfig& precision,
                             const CalibrationTable* calibration, const LkdObserver& observer) {
  if (model.quantized_prefix() != 0) throw UsageError("lkd_quantize_model: model must start in full precision");
  LKDReport report;
  for (std::size_t layer = 0; layer < model.num_layers(); ++layer) {
    LayerResult r = lkd_quantize_layer(model, layer, config, precision, calibration, observer);
    model.blocks[layer] = r.sealed;
    report.layers.push_back(std::move(r));
  }
  return report;
}

}  // namespace zq
