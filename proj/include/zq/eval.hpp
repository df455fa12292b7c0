// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "zq/token_data.hpp"
#include "zq/transformer.hpp"

namespace zq {

/// exp of the mean next-token negative log-likelihood (natural log) under
/// teacher forcing. `logits` rows follow `batch`; the last position of each
/// sequence has no target. Throws UsageError if there are no targets.
double perplexity_from_logits(const Tensor& logits, const TokenBatch& batch);

/// Perplexity of `model` over a stream cut into consecutive windows of at
/// most `window` ids. Throws UsageError for streams shorter than two ids.
double perplexity(const ToyModel& model, const TokenStream& stream, const PrecisionConfig& precision,
                  std::size_t window, const RunOptions& options = {});

/// Logical size of weight payloads. The baseline counts every weight
/// element at 16 bits.
struct Footprint {
  std::uint64_t bits = 0;
  std::uint64_t baseline_bits = 0;

  double bytes() const { return static_cast<double>(bits) / 8.0; }
  double baseline_bytes() const { return static_cast<double>(baseline_bits) / 8.0; }
  double ratio() const;
  Footprint& operator+=(const Footprint& other);
};

/// Quantized: rows*cols*bits + 32 per scale. Float: 16 bits per element.
Footprint footprint(const LinearWeight& weight);
/// The six weight matrices of a block; biases and LN parameters excluded.
Footprint footprint(const QuantizedBlock& block);
/// A float block counted as it would be stored under `precision`.
Footprint footprint(const BlockWeights& block, const PrecisionConfig& precision);
/// Sum over blocks. Float blocks are counted under `precision`.
Footprint footprint(const ToyModel& model, const PrecisionConfig& precision);

struct SchemeReport {
  std::string label;
  std::vector<double> layer_mse;  // block output error on the float prefix
  double output_mse = 0.0;        // logits vs the float model
  double agreement = 1.0;         // argmax agreement with the float model
  double perplexity = 0.0;        // on the evaluation batch
  Footprint footprint;
};

/// Compares `candidate` (run under `precision`) with the float `reference`
/// on `batch`.
SchemeReport evaluate_model(const ToyModel& reference, const ToyModel& candidate, const PrecisionConfig& precision,
                            const TokenBatch& batch, const CalibrationTable* calibration = nullptr);

/// One report per scheme, each quantized directly from the float `model`.
/// Static schemes need `calibration`.
std::vector<SchemeReport> scheme_compare(const ToyModel& model, std::span<const PrecisionConfig> schemes,
                                         const TokenBatch& batch, const CalibrationTable* calibration = nullptr);

struct GemmShape {
  std::size_t m = 0, k = 0, n = 0;
};

struct BenchRow {
  GemmShape shape;
  double int8_us = 0.0;  // median
  double float_us = 0.0;
};

/// Median wall-clock time of igemm and the float matmul per shape.
std::vector<BenchRow> bench(std::span<const GemmShape> shapes, std::size_t runs = 20, std::uint64_t seed = 0);

/// Text table rendered as CSV or aligned columns.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(std::ostream& out, const Table& table);
void write_aligned(std::ostream& out, const Table& table);

/// Shortest round-trippable decimal form of a value.
std::string format_number(double value);

Table scheme_table(std::span<const SchemeReport> reports);
Table bench_table(std::span<const BenchRow> rows);
Table token_range_table(const RangeReport& report);
Table weight_range_table(const RangeReport& report);

}  // namespace zq
