// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#include "zq/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>

#include "zq/error.hpp"
#include "zq/igemm.hpp"

namespace zq {

double perplexity_from_logits(const Tensor& logits, const TokenBatch& batch) {
  if (logits.rows() != batch.tokens()) throw DimensionError("perplexity: logits rows do not match the batch");
  if (batch.seq_len < 2) throw UsageError("perplexity: sequences need at least two ids");
  const std::size_t vocab = logits.cols();
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < batch.batch; ++s) {
    for (std::size_t i = 0; i + 1 < batch.seq_len; ++i) {
      const std::size_t r = s * batch.seq_len + i;
      const std::uint32_t target = batch.ids[r + 1];
      if (target >= vocab) throw InputError("perplexity: target id outside the vocabulary");
      const auto row = logits.row(r);
      double mx = row[0];
      for (float v : row) mx = std::max(mx, static_cast<double>(v));
      double z = 0.0;
      for (float v : row) z += std::exp(static_cast<double>(v) - mx);
      nll += std::log(z) + mx - static_cast<double>(row[target]);
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

double perplexity(const ToyModel& model, const TokenStream& stream, const PrecisionConfig& precision,
                  std::size_t window, const RunOptions& options) {
  if (stream.size() < 2) throw UsageError("perplexity: stream must hold at least two ids");
  if (window < 2) throw UsageError("perplexity: window must be at least 2");
  const auto& ids = stream.tokens();
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + 1 < ids.size(); start += window) {
    const std::size_t len = std::min(window, ids.size() - start);
    if (len < 2) break;
    const TokenBatch b = TokenBatch::single({ids.begin() + static_cast<std::ptrdiff_t>(start),
                                             ids.begin() + static_cast<std::ptrdiff_t>(start + len)});
    const Tensor logits = model_forward(b, model, precision, options);
    nll += std::log(perplexity_from_logits(logits, b)) * static_cast<double>(len - 1);
    count += len - 1;
  }
  return std::exp(nll / static_cast<double>(count));
}

double Footprint::ratio() const {
  if (bits == 0) throw UsageError("footprint ratio of an empty model");
  return static_cast<double>(baseline_bits) / static_cast<double>(bits);
}

Footprint& Footprint::operator+=(const Footprint& other) {
  bits += other.bits;
  baseline_bits += other.baseline_bits;
  return *this;
}

Footprint footprint(const LinearWeight& weight) {
  if (const auto* q = std::get_if<QuantizedMatrix>(&weight)) {
    return {q->logical_bits(), static_cast<std::uint64_t>(q->rows) * q->cols * 16};
  }
  const std::uint64_t n = std::get<Tensor>(weight).size();
  return {n * 16, n * 16};
}

Footprint footprint(const QuantizedBlock& block) {
  Footprint f;
  for (const LinearWeight* w : {&block.w_q, &block.w_k, &block.w_v, &block.w_o, &block.w_h4h, &block.w_4hh}) {
    f += footprint(*w);
  }
  return f;
}

namespace {

Footprint matrix_footprint(const Tensor& w, WeightPrecision p, std::size_t groups) {
  const std::uint64_t n = w.size();
  if (p == WeightPrecision::Full) return {n * 16, n * 16};
  const std::uint64_t g = partition_rows(w.rows(), groups).size();
  return {n * static_cast<std::uint64_t>(weight_bits(p)) + 32 * g, n * 16};
}

}  // namespace

Footprint footprint(const BlockWeights& block, const PrecisionConfig& precision) {
  Footprint f;
  for (const Tensor* w : {&block.w_q, &block.w_k, &block.w_v, &block.w_o}) {
    f += matrix_footprint(*w, precision.mhsa_weights, precision.group_count);
  }
  for (const Tensor* w : {&block.w_h4h, &block.w_4hh}) {
    f += matrix_footprint(*w, precision.ffc_weights, precision.group_count);
  }
  return f;
}

Footprint footprint(const ToyModel& model, const PrecisionConfig& precision) {
  Footprint f;
  for (const Block& b : model.blocks) {
    if (const auto* q = std::get_if<QuantizedBlock>(&b)) {
      f += footprint(*q);
    } else {
      f += footprint(std::get<BlockWeights>(b), precision);
    }
  }
  return f;
}

namespace {

std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

SchemeReport evaluate_model(const ToyModel& reference, const ToyModel& candidate, const PrecisionConfig& precision,
                            const TokenBatch& batch, const CalibrationTable* calibration) {
  if (reference.num_layers() != candidate.num_layers() || reference.dim() != candidate.dim() ||
      reference.vocab() != candidate.vocab()) {
    throw DimensionError("evaluate_model: reference and candidate geometries differ");
  }
  if (reference.quantized_prefix() != 0) throw UsageError("evaluate_model: reference must be full precision");
  batch.validate(reference.vocab());
  const PrecisionConfig full = PrecisionConfig::full();
  RunOptions opts;
  opts.calibration = calibration;

  SchemeReport r;
  r.label = precision.label();
  Tensor hidden = embed(batch, reference);
  for (std::size_t l = 0; l < reference.num_layers(); ++l) {
    const Tensor want = run_block(hidden, reference, l, full, batch.seq_len);
    const Tensor got = run_block(hidden, candidate, l, precision, batch.seq_len, opts);
    r.layer_mse.push_back(mean_squared_error(got, want));
    hidden = want;
  }
  const Tensor ref_logits = model_head(hidden, reference);
  const Tensor logits = model_forward(batch, candidate, precision, opts);
  r.output_mse = mean_squared_error(logits, ref_logits);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) agree += argmax(logits.row(i)) == argmax(ref_logits.row(i));
  r.agreement = static_cast<double>(agree) / static_cast<double>(logits.rows());
  r.perplexity = perplexity_from_logits(logits, batch);
  r.footprint = footprint(candidate, precision);
  return r;
}

std::vector<SchemeReport> scheme_compare(const ToyModel& model, std::span<const PrecisionConfig> schemes,
                                         const TokenBatch& batch, const CalibrationTable* calibration) {
  if (schemes.empty()) throw UsageError("scheme_compare: no schemes given");
  std::vector<SchemeReport> out;
  out.reserve(schemes.size());
  for (const PrecisionConfig& p : schemes) {
    p.validate();
    const ToyModel candidate = quantize_model(model, p, calibration);
    out.push_back(evaluate_model(model, candidate, p, batch, calibration));
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double median_us(std::size_t runs, F&& f) {
  std::vector<double> t;
  t.reserve(runs);
  for (std::size_t i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    f();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::micro>(b - a).count());
  }
  return median(std::move(t));
}

}  // namespace

std::vector<BenchRow> bench(std::span<const GemmShape> shapes, std::size_t runs, std::uint64_t seed) {
  if (runs < 20) throw UsageError("bench: at least 20 runs per shape");
  Rng rng(seed);
  std::vector<BenchRow> out;
  for (const GemmShape& s : shapes) {
    if (s.m == 0 || s.k == 0 || s.n == 0) throw UsageError("bench: empty shape");
    const Tensor x = Tensor::randn({s.m, s.k}, rng);
    const Tensor w = Tensor::randn({s.n, s.k}, rng);
    const QuantizedActivation xq = quantize_activation_tokenwise(x, 8);
    const QuantizedMatrix wq = quantize_weight_groupwise(w, 1, 8);
    volatile float sink = 0.0f;
    BenchRow row;
    row.shape = s;
    row.int8_us = median_us(runs, [&] { sink = static_cast<float>(igemm(xq, wq).acc[0]); });
    row.float_us = median_us(runs, [&] { sink = matmul_nt(x, w)[0]; });
    (void)sink;
    out.push_back(row);
  }
  return out;
}

void write_csv(std::ostream& out, const Table& table) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

void write_aligned(std::ostream& out, const Table& table) {
  std::vector<std::size_t> width(table.header.size(), 0);
  auto measure = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i) width[i] = std::max(width[i], cells[i].size());
  };
  measure(table.header);
  for (const auto& r : table.rows) measure(r);
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << "  ";
      out << std::setw(static_cast<int>(width[i])) << (i == 0 ? std::left : std::right) << cells[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

Table scheme_table(std::span<const SchemeReport> reports) {
  Table t;
  t.header = {"scheme", "output_mse", "agreement", "perplexity", "footprint_bytes", "footprint_ratio"};
  std::size_t layers = 0;
  for (const auto& r : reports) layers = std::max(layers, r.layer_mse.size());
  for (std::size_t l = 0; l < layers; ++l) t.header.push_back("layer" + std::to_string(l) + "_mse");
  for (const auto& r : reports) {
    std::vector<std::string> row = {r.label,
                                    format_number(r.output_mse),
                                    format_number(r.agreement),
                                    format_number(r.perplexity),
                                    format_number(r.footprint.bytes()),
                                    format_number(r.footprint.ratio())};
    for (std::size_t l = 0; l < layers; ++l) row.push_back(l < r.layer_mse.size() ? format_number(r.layer_mse[l]) : "");
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table bench_table(std::span<const BenchRow> rows) {
  Table t;
  t.header = {"m", "k", "n", "int8_median_us", "float_median_us", "float_over_int8"};
  for (const auto& r : rows) {
    t.rows.push_back({std::to_string(r.shape.m), std::to_string(r.shape.k), std::to_string(r.shape.n),
                      format_number(r.int8_us), format_number(r.float_us), format_number(r.float_us / r.int8_us)});
  }
  return t;
}

Table token_range_table(const RangeReport& report) {
  Table t;
  t.header = {"layer", "token"};
  for (Site s : kAllSites) {
    t.header.push_back(std::string(site_name(s)) + "_min");
    t.header.push_back(std::string(site_name(s)) + "_max");
  }
  for (const auto& r : report.tokens) {
    std::vector<std::string> row = {std::to_string(r.layer), std::to_string(r.token)};
    for (std::size_t i = 0; i < kNumSites; ++i) {
      row.push_back(format_number(r.min[i]));
      row.push_back(format_number(r.max[i]));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

Table weight_range_table(const RangeReport& report) {
  Table t;
  t.header = {"layer", "row", "min", "max", "max_abs"};
  for (const auto& r : report.w_o) {
    t.rows.push_back({std::to_string(r.layer), std::to_string(r.row), format_number(r.min), format_number(r.max),
                      format_number(r.max_abs)});
  }
  return t;
}

}  // namespace zq
