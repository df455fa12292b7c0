// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>
#include <string>

#include "zq/block_tape.hpp"
#include "zq/error.hpp"

namespace zq {

int weight_bits(WeightPrecision p) {
  switch (p) {
    case WeightPrecision::Int8: return 8;
    case WeightPrecision::Int4: return 4;
    case WeightPrecision::Full: return 0;
  }
  return 0;
}

namespace {

std::optional<WeightPrecision> parse_weight_bits(const std::string& s) {
  if (s == "4") return WeightPrecision::Int4;
  if (s == "8") return WeightPrecision::Int8;
  if (s == "16") return WeightPrecision::Full;
  return std::nullopt;
}

std::string weight_label(WeightPrecision p) {
  return p == WeightPrecision::Full ? "16" : std::to_string(weight_bits(p));
}

}  // namespace

const std::vector<std::string>& known_schemes() {
  static const std::vector<std::string> schemes = {"W16A16", "W8A16",  "W8A8",     "W8A8/16",  "W4/8A16",
                                                   "W4/8A8", "W4/8A8/16", "W4A16", "W4A8"};
  return schemes;
}

PrecisionConfig PrecisionConfig::from_scheme(std::string_view scheme, std::size_t groups) {
  // W<ffc>[/<mhsa>]A<act>[/16]
  static const std::regex pattern(R"(W(4|8|16)(?:/(4|8|16))?A(8|16)(/16)?)");
  std::cmatch m;
  const std::string text(scheme);
  auto fail = [&]() -> PrecisionConfig {
    std::string valid;
    for (const auto& s : known_schemes()) valid += (valid.empty() ? "" : ", ") + s;
    throw UsageError("unknown precision scheme '" + text + "'; valid schemes: " + valid);
  };
  if (!std::regex_match(text.c_str(), m, pattern)) return fail();
  PrecisionConfig p;
  p.ffc_weights = *parse_weight_bits(m[1].str());
  p.mhsa_weights = m[2].matched ? *parse_weight_bits(m[2].str()) : p.ffc_weights;
  if (m[3].str() == "16") {
    if (m[4].matched) return fail();
    p.activations = ActivationScheme::Full;
  } else {
    p.activations = m[4].matched ? ActivationScheme::AttnInputFull : ActivationScheme::AllInt8;
  }
  p.group_count = groups;
  p.validate();
  return p;
}

std::string PrecisionConfig::label() const {
  std::string w = mhsa_weights == ffc_weights ? weight_label(ffc_weights)
                                              : weight_label(ffc_weights) + "/" + weight_label(mhsa_weights);
  std::string a;
  switch (activations) {
    case ActivationScheme::Full: a = "16"; break;
    case ActivationScheme::AllInt8: a = "8"; break;
    case ActivationScheme::AttnInputFull: a = "8/16"; break;
  }
  return "W" + w + "A" + a;
}

bool PrecisionConfig::quantizes_weights() const {
  return mhsa_weights != WeightPrecision::Full || ffc_weights != WeightPrecision::Full;
}

void PrecisionConfig::validate() const {
  if (group_count < 1) throw UsageError("group count must be >= 1");
  if (activation_static && !quantizes_activations()) {
    throw UsageError("static activation scales require an activation-quantized scheme");
  }
}

std::size_t default_group_count(std::size_t dim) {
  if (dim >= 2048) return 128;
  if (dim >= 1024) return 64;
  if (dim >= 512) return 48;
  return std::min<std::size_t>(16, dim);
}

std::string_view site_name(Site site) {
  switch (site) {
    case Site::QkvInput: return "qkv_in";
    case Site::AttnOutInput: return "attn_out_in";
    case Site::FfcInInput: return "ffc_in";
    case Site::FfcOutInput: return "ffc_out_in";
  }
  return "?";
}

std::optional<Site> parse_site(std::string_view name) {
  for (Site s : kAllSites)
    if (site_name(s) == name) return s;
  return std::nullopt;
}

ActMode activation_mode_for(Site site, const PrecisionConfig& precision, const SiteScales* static_scales) {
  if (precision.activations == ActivationScheme::Full) return FullActivation{};
  if (precision.activations == ActivationScheme::AttnInputFull && site == Site::QkvInput) return FullActivation{};
  if (precision.activation_static) {
    if (!static_scales) throw UsageError("static activation quantization requires calibrated scales");
    return StaticActivation{(*static_scales)[static_cast<std::size_t>(site)], kActivationBits};
  }
  return DynamicActivation{kActivationBits};
}

void BlockWeights::validate() const {
  const std::size_t d = w_q.rows();
  auto expect = [](const Tensor& t, std::vector<std::size_t> shape, const char* name) {
    if (t.shape() != shape) {
      throw DimensionError(std::string("block parameter ") + name + " has shape " + t.shape_string() + ", expected " +
                           shape_string(shape));
    }
    if (!all_finite(t)) throw ValueError(std::string("block parameter ") + name + " is not finite");
  };
  if (d == 0) throw DimensionError("empty block");
  expect(w_q, {d, d}, "w_q");
  expect(w_k, {d, d}, "w_k");
  expect(w_v, {d, d}, "w_v");
  expect(w_o, {d, d}, "w_o");
  expect(w_h4h, {4 * d, d}, "w_h4h");
  expect(w_4hh, {d, 4 * d}, "w_4hh");
  expect(b_q, {d}, "b_q");
  expect(b_k, {d}, "b_k");
  expect(b_v, {d}, "b_v");
  expect(b_o, {d}, "b_o");
  expect(b_h4h, {4 * d}, "b_h4h");
  expect(b_4hh, {d}, "b_4hh");
  expect(ln1_gamma, {d}, "ln1_gamma");
  expect(ln1_beta, {d}, "ln1_beta");
  expect(ln2_gamma, {d}, "ln2_gamma");
  expect(ln2_beta, {d}, "ln2_beta");
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError("hidden size " + std::to_string(d) + " is not divisible by " + std::to_string(num_heads) +
                         " heads");
  }
}

std::size_t QuantizedBlock::dim() const { return b_q.size(); }

namespace {

LinearWeight quantize_linear_weight(const Tensor& w, WeightPrecision precision, std::size_t groups) {
  if (precision == WeightPrecision::Full) return w;
  return quantize_weight_groupwise(w, groups, weight_bits(precision));
}

}  // namespace

QuantizedBlock quantize_block(const BlockWeights& block, const PrecisionConfig& precision) {
  precision.validate();
  const std::size_t g = precision.group_count;
  QuantizedBlock q;
  q.w_q = quantize_linear_weight(block.w_q, precision.mhsa_weights, g);
  q.w_k = quantize_linear_weight(block.w_k, precision.mhsa_weights, g);
  q.w_v = quantize_linear_weight(block.w_v, precision.mhsa_weights, g);
  q.w_o = quantize_linear_weight(block.w_o, precision.mhsa_weights, g);
  q.w_h4h = quantize_linear_weight(block.w_h4h, precision.ffc_weights, g);
  q.w_4hh = quantize_linear_weight(block.w_4hh, precision.ffc_weights, g);
  q.b_q = block.b_q;
  q.b_k = block.b_k;
  q.b_v = block.b_v;
  q.b_o = block.b_o;
  q.b_h4h = block.b_h4h;
  q.b_4hh = block.b_4hh;
  q.ln1_gamma = block.ln1_gamma;
  q.ln1_beta = block.ln1_beta;
  q.ln2_gamma = block.ln2_gamma;
  q.ln2_beta = block.ln2_beta;
  q.num_heads = block.num_heads;
  return q;
}

Tensor effective_weight(const LinearWeight& w) {
  if (const auto* t = std::get_if<Tensor>(&w)) return *t;
  return std::get<QuantizedMatrix>(w).dequantize();
}

namespace {

// A GeMM input after the activation decision: float, or quantized once and
// shared by every GeMM reading it.
struct GemmInput {
  const Tensor* x = nullptr;
  std::optional<QuantizedActivation> xq;
  mutable std::optional<Tensor> dequantized;

  const Tensor& as_float() const {
    if (!xq) return *x;
    if (!dequantized) dequantized = xq->dequantize();
    return *dequantized;
  }
};

GemmInput prepare_input(const Tensor& x, const ActMode& mode) {
  GemmInput in;
  in.x = &x;
  if (!std::holds_alternative<FullActivation>(mode)) in.xq = quantize_activation(x, mode);
  return in;
}

Tensor apply_linear(const GemmInput& in, const LinearWeight& w, const Tensor& bias) {
  if (const auto* qw = std::get_if<QuantizedMatrix>(&w)) {
    if (in.xq) return quantized_linear(*in.xq, *qw, bias);
    return quantized_linear(*in.x, *qw, bias, FullActivation{});
  }
  return linear(in.as_float(), std::get<Tensor>(w), bias);
}

void layer_norm_stats(const Tensor& x, Tensor& xhat, std::vector<double>& rstd) {
  const std::size_t d = x.cols();
  xhat = Tensor(x.shape());
  rstd.assign(x.rows(), 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto in = x.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double denom = var + kLayerNormEps;
    rstd[r] = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    auto out = xhat.row(r);
    for (std::size_t j = 0; j < d; ++j) out[j] = static_cast<float>((in[j] - mean) * rstd[r]);
  }
}

void write_block(Tensor& dst, const Tensor& src, std::size_t row0, std::size_t col0) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    const auto s = src.row(r);
    std::copy(s.begin(), s.end(), dst.row(row0 + r).begin() + static_cast<std::ptrdiff_t>(col0));
  }
}

Tensor sub_block(const Tensor& src, std::size_t row0, std::size_t rows, std::size_t col0, std::size_t cols) {
  Tensor out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto s = src.row(row0 + r).subspan(col0, cols);
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

namespace detail {

Tensor forward_block(const Tensor& x, const QuantizedBlock& block, const PrecisionConfig& precision,
                     const ForwardOptions& options, BlockTape* tape) {
  const std::size_t d = block.dim();
  if (x.rank() != 2 || x.cols() != d) {
    throw DimensionError("block_forward: input " + x.shape_string() + " does not match hidden size " +
                         std::to_string(d));
  }
  const std::size_t rows = x.rows();
  const std::size_t t = options.seq_len ? options.seq_len : rows;
  if (rows % t != 0) throw DimensionError("block_forward: rows are not a whole number of sequences");
  const std::size_t heads = block.num_heads;
  if (heads == 0 || d % heads != 0) throw DimensionError("block_forward: hidden size not divisible by heads");
  const std::size_t dh = d / heads;
  const SiteScales* scales = options.static_scales;
  auto notify = [&](Site s, const Tensor& a) {
    if (options.observer) (*options.observer)(s, a);
  };

  // Self-attention.
  notify(Site::QkvInput, x);
  const GemmInput qkv_in = prepare_input(x, activation_mode_for(Site::QkvInput, precision, scales));
  Tensor q = apply_linear(qkv_in, block.w_q, block.b_q);
  Tensor k = apply_linear(qkv_in, block.w_k, block.b_k);
  Tensor v = apply_linear(qkv_in, block.w_v, block.b_v);

  const float inv_sqrt = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor ctx({rows, d});
  for (std::size_t s = 0; s < rows / t; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor qh = sub_block(q, s * t, t, h * dh, dh);
      const Tensor kh = sub_block(k, s * t, t, h * dh, dh);
      const Tensor vh = sub_block(v, s * t, t, h * dh, dh);
      Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
      if (options.causal) apply_causal_mask(scores);
      Tensor probs = softmax(scores);
      write_block(ctx, matmul(probs, vh), s * t, h * dh);
      if (tape) tape->probs.push_back(std::move(probs));
    }
  }

  notify(Site::AttnOutInput, ctx);
  const GemmInput o_in = prepare_input(ctx, activation_mode_for(Site::AttnOutInput, precision, scales));
  const Tensor attn = apply_linear(o_in, block.w_o, block.b_o);
  const Tensor r1 = add(x, attn);
  Tensor h1 = layer_norm(r1, block.ln1_gamma, block.ln1_beta, kLayerNormEps);

  // Feed-forward.
  notify(Site::FfcInInput, h1);
  const GemmInput h4h_in = prepare_input(h1, activation_mode_for(Site::FfcInInput, precision, scales));
  Tensor pre_gelu = apply_linear(h4h_in, block.w_h4h, block.b_h4h);

  const ActMode out_mode = activation_mode_for(Site::FfcOutInput, precision, scales);
  Tensor activated;
  GemmInput fourhh_in;
  if (const auto* dyn = std::get_if<DynamicActivation>(&out_mode)) {
    // GeLU writes the INT8 GeMM operand directly.
    fourhh_in.xq = gelu_quantized(pre_gelu, dyn->bits);
    if (options.observer) notify(Site::FfcOutInput, gelu(pre_gelu));
  } else {
    activated = gelu(pre_gelu);
    notify(Site::FfcOutInput, activated);
    fourhh_in = prepare_input(activated, out_mode);
  }
  fourhh_in.x = &activated;
  const Tensor f = apply_linear(fourhh_in, block.w_4hh, block.b_4hh);
  const Tensor r2 = add(h1, f);
  Tensor out = layer_norm(r2, block.ln2_gamma, block.ln2_beta, kLayerNormEps);

  if (tape) {
    tape->seq_len = t;
    tape->num_heads = heads;
    tape->qkv_in = qkv_in.as_float();
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->o_in = o_in.as_float();
    layer_norm_stats(r1, tape->ln1_xhat, tape->ln1_rstd);
    tape->h4h_in = h4h_in.as_float();
    tape->fourhh_in = fourhh_in.as_float();
    tape->pre_gelu = std::move(pre_gelu);
    layer_norm_stats(r2, tape->ln2_xhat, tape->ln2_rstd);
    tape->h1 = std::move(h1);
    tape->out = out;
    tape->w_q = effective_weight(block.w_q);
    tape->w_k = effective_weight(block.w_k);
    tape->w_v = effective_weight(block.w_v);
    tape->w_o = effective_weight(block.w_o);
    tape->w_h4h = effective_weight(block.w_h4h);
    tape->w_4hh = effective_weight(block.w_4hh);
  }
  return out;
}

}  // namespace detail

Tensor block_forward(const Tensor& x, const QuantizedBlock& block, const PrecisionConfig& precision,
                     const ForwardOptions& options) {
  const SiteScales* scales = options.static_scales;
  if (!scales && block.static_scales) scales = &*block.static_scales;
  ForwardOptions opts = options;
  opts.static_scales = scales;
  return detail::forward_block(x, block, precision, opts, nullptr);
}

Tensor block_forward(const Tensor& x, const BlockWeights& block, const PrecisionConfig& precision,
                     const ForwardOptions& options) {
  return detail::forward_block(x, quantize_block(block, precision), precision, options, nullptr);
}

TokenBatch TokenBatch::single(std::vector<std::uint32_t> ids) {
  TokenBatch b;
  b.seq_len = ids.size();
  b.batch = 1;
  b.ids = std::move(ids);
  return b;
}

void TokenBatch::validate(std::size_t vocab) const {
  if (seq_len == 0 || batch == 0 || ids.size() != batch * seq_len) {
    throw UsageError("token batch geometry does not match its id count");
  }
  for (std::uint32_t id : ids) {
    if (id >= vocab) {
      throw InputError("token id " + std::to_string(id) + " is outside the vocabulary of " + std::to_string(vocab));
    }
  }
}

std::size_t ToyModel::num_heads() const {
  if (blocks.empty()) return 0;
  return std::visit([](const auto& b) { return b.num_heads; }, blocks.front());
}

std::size_t ToyModel::quantized_prefix() const {
  std::size_t n = 0;
  while (n < blocks.size() && is_quantized(n)) ++n;
  for (std::size_t i = n; i < blocks.size(); ++i) {
    if (is_quantized(i)) throw InvariantError("quantized blocks do not form a prefix of the model");
  }
  return n;
}

void ToyModel::validate() const {
  if (blocks.empty()) throw InvariantError("model has no blocks");
  if (embedding.rank() != 2) throw DimensionError("embedding must be a matrix");
  const std::size_t d = dim();
  if (final_ln_gamma.size() != d || final_ln_beta.size() != d) throw DimensionError("final layer norm size mismatch");
  for (const Block& b : blocks) {
    if (const auto* fb = std::get_if<BlockWeights>(&b)) {
      fb->validate();
      if (fb->dim() != d) throw DimensionError("block hidden size differs from the embedding");
    } else if (std::get<QuantizedBlock>(b).dim() != d) {
      throw DimensionError("block hidden size differs from the embedding");
    }
  }
}

BlockWeights make_block(std::size_t dim, std::size_t heads, float init_std, Rng& rng) {
  BlockWeights b;
  b.num_heads = heads;
  b.w_q = Tensor::randn({dim, dim}, rng, init_std);
  b.w_k = Tensor::randn({dim, dim}, rng, init_std);
  b.w_v = Tensor::randn({dim, dim}, rng, init_std);
  b.w_o = Tensor::randn({dim, dim}, rng, init_std);
  b.w_h4h = Tensor::randn({4 * dim, dim}, rng, init_std);
  b.w_4hh = Tensor::randn({dim, 4 * dim}, rng, init_std);
  b.b_q = Tensor::vector(dim);
  b.b_k = Tensor::vector(dim);
  b.b_v = Tensor::vector(dim);
  b.b_o = Tensor::vector(dim);
  b.b_h4h = Tensor::vector(4 * dim);
  b.b_4hh = Tensor::vector(dim);
  b.ln1_gamma = Tensor::filled({dim}, 1.0f);
  b.ln1_beta = Tensor::vector(dim);
  b.ln2_gamma = Tensor::filled({dim}, 1.0f);
  b.ln2_beta = Tensor::vector(dim);
  b.validate();
  return b;
}

void apply_hetero_knob(BlockWeights& block, Rng& rng) {
  const std::size_t n = block.w_o.rows();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t picked = std::max<std::size_t>(1, n / 4);
  for (std::size_t i = 0; i < picked; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
    std::swap(order[i], order[j]);
    for (float& w : block.w_o.row(order[i])) w *= 10.0f;
  }
}

ToyModel make_toy_model(const ToyConfig& config) {
  if (config.vocab < 2 || config.dim == 0 || config.layers == 0 || config.heads == 0 ||
      config.dim % config.heads != 0) {
    throw UsageError("invalid toy geometry: vocab >= 2, layers >= 1 and dim divisible by heads are required");
  }
  if (!(config.init_std > 0.0f) || !(config.embed_std > 0.0f)) throw UsageError("initialization scales must be positive");
  Rng rng(config.seed);
  ToyModel m;
  m.causal = config.causal;
  m.embedding = Tensor::randn({config.vocab, config.dim}, rng, config.embed_std);
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockWeights b = make_block(config.dim, config.heads, config.init_std, rng);
    if (config.hetero_knob) apply_hetero_knob(b, rng);
    m.blocks.emplace_back(std::move(b));
  }
  m.final_ln_gamma = Tensor::filled({config.dim}, 1.0f);
  m.final_ln_beta = Tensor::vector(config.dim);
  return m;
}

Tensor sinusoidal_position(std::size_t seq_len, std::size_t dim) {
  Tensor pe({seq_len, dim});
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * freq;
      pe(pos, i) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

Tensor embed(const TokenBatch& batch, const ToyModel& model) {
  batch.validate(model.vocab());
  const std::size_t d = model.dim();
  const Tensor pe = sinusoidal_position(batch.seq_len, d);
  Tensor x({batch.tokens(), d});
  for (std::size_t i = 0; i < batch.tokens(); ++i) {
    const auto e = model.embedding.row(batch.ids[i]);
    const auto p = pe.row(i % batch.seq_len);
    auto out = x.row(i);
    for (std::size_t j = 0; j < d; ++j) out[j] = e[j] + p[j];
  }
  return x;
}

Tensor run_block(const Tensor& hidden, const ToyModel& model, std::size_t layer, const PrecisionConfig& precision,
                 std::size_t seq_len, const RunOptions& options) {
  if (layer >= model.num_layers()) throw UsageError("layer index out of range");
  ForwardOptions fo;
  fo.causal = model.causal;
  fo.seq_len = seq_len;
  std::function<void(Site, const Tensor&)> site_observer;
  if (options.observer) {
    site_observer = [&](Site s, const Tensor& a) { (*options.observer)(layer, s, a); };
    fo.observer = &site_observer;
  }
  if (options.calibration) {
    if (options.calibration->size() != model.num_layers()) {
      throw UsageError("calibration table does not match the number of layers");
    }
    fo.static_scales = &(*options.calibration)[layer];
  }
  return std::visit([&](const auto& b) { return block_forward(hidden, b, precision, fo); }, model.blocks[layer]);
}

Tensor run_to_layer(const TokenBatch& batch, const ToyModel& model, std::size_t k, const PrecisionConfig& precision,
                    const RunOptions& options) {
  if (k > model.num_layers()) {
    throw UsageError("run_to_layer: k = " + std::to_string(k) + " exceeds " + std::to_string(model.num_layers()) +
                     " layers");
  }
  Tensor h = embed(batch, model);
  for (std::size_t l = 0; l < k; ++l) h = run_block(h, model, l, precision, batch.seq_len, options);
  return h;
}

Tensor model_head(const Tensor& hidden, const ToyModel& model) {
  return matmul_nt(layer_norm(hidden, model.final_ln_gamma, model.final_ln_beta, kLayerNormEps), model.embedding);
}

Tensor model_forward(const TokenBatch& batch, const ToyModel& model, const PrecisionConfig& precision,
                     const RunOptions& options) {
  return model_head(run_to_layer(batch, model, model.num_layers(), precision, options), model);
}

ToyModel quantize_model(const ToyModel& model, const PrecisionConfig& precision, const CalibrationTable* calibration) {
  ToyModel out = model;
  for (std::size_t l = 0; l < out.blocks.size(); ++l) {
    if (const auto* fb = std::get_if<BlockWeights>(&out.blocks[l])) {
      QuantizedBlock qb = quantize_block(*fb, precision);
      if (precision.activation_static) {
        if (!calibration || calibration->size() != out.blocks.size()) {
          throw UsageError("static activation quantization requires a calibration table for every layer");
        }
        qb.static_scales = (*calibration)[l];
      }
      out.blocks[l] = std::move(qb);
    }
  }
  return out;
}

SiteRanges calibrate_sites(const ToyModel& model, std::span<const TokenBatch> batches, float momentum, int bits) {
  if (batches.empty()) throw UsageError("calibration needs at least one batch");
  std::vector<std::array<Calibrator, kNumSites>> cal;
  cal.reserve(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    cal.push_back({Calibrator(momentum), Calibrator(momentum), Calibrator(momentum), Calibrator(momentum)});
  }
  const std::function<void(std::size_t, Site, const Tensor&)> observer = [&](std::size_t layer, Site s,
                                                                              const Tensor& a) {
    cal[layer][static_cast<std::size_t>(s)].observe(a);
  };
  RunOptions opts;
  opts.observer = &observer;
  for (const TokenBatch& b : batches) run_to_layer(b, model, model.num_layers(), PrecisionConfig::full(), opts);

  SiteRanges ranges(model.num_layers());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    for (std::size_t s = 0; s < kNumSites; ++s) {
      ranges[l][s] = {cal[l][s].x_max(), cal[l][s].x_min(), cal[l][s].finalize(bits)};
    }
  }
  return ranges;
}

CalibrationTable to_calibration_table(const SiteRanges& ranges) {
  CalibrationTable table(ranges.size());
  for (std::size_t l = 0; l < ranges.size(); ++l)
    for (std::size_t s = 0; s < kNumSites; ++s) table[l][s] = ranges[l][s].scale;
  return table;
}

double RangeReport::w_o_row_spread(std::size_t layer) const {
  float lo = std::numeric_limits<float>::infinity(), hi = 0.0f;
  for (const WeightRowRange& r : w_o) {
    if (r.layer != layer) continue;
    lo = std::min(lo, r.max_abs);
    hi = std::max(hi, r.max_abs);
  }
  return lo > 0.0f ? static_cast<double>(hi) / lo : std::numeric_limits<double>::infinity();
}

RangeReport range_report(const ToyModel& model, const Tensor& hidden, std::size_t seq_len) {
  RangeReport report;
  const std::size_t tokens = hidden.rows();
  report.tokens.resize(model.num_layers() * tokens);
  for (std::size_t l = 0; l < model.num_layers(); ++l)
    for (std::size_t t = 0; t < tokens; ++t) {
      report.tokens[l * tokens + t].layer = l;
      report.tokens[l * tokens + t].token = t;
    }
  const std::function<void(std::size_t, Site, const Tensor&)> observer = [&](std::size_t layer, Site s,
                                                                              const Tensor& a) {
    const std::size_t si = static_cast<std::size_t>(s);
    for (std::size_t t = 0; t < a.rows(); ++t) {
      const auto row = a.row(t);
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      report.tokens[layer * tokens + t].min[si] = *lo;
      report.tokens[layer * tokens + t].max[si] = *hi;
    }
  };
  RunOptions opts;
  opts.observer = &observer;
  Tensor h = hidden;
  for (std::size_t l = 0; l < model.num_layers(); ++l) h = run_block(h, model, l, PrecisionConfig::full(), seq_len, opts);

  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    const Tensor w_o = std::visit(
        [](const auto& b) -> Tensor {
          if constexpr (std::is_same_v<std::decay_t<decltype(b)>, BlockWeights>) {
            return b.w_o;
          } else {
            return effective_weight(b.w_o);
          }
        },
        model.blocks[l]);
    for (std::size_t r = 0; r < w_o.rows(); ++r) {
      const auto row = w_o.row(r);
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      report.w_o.push_back({l, r, *lo, *hi, std::max(std::fabs(*lo), std::fabs(*hi))});
    }
  }
  return report;
}

RangeReport range_report(const ToyModel& model, const TokenBatch& sample) {
  return range_report(model, embed(sample, model), sample.seq_len);
}

}  // namespace zq
