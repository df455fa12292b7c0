// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "zq/block_tape.hpp"
#include "zq/token_data.hpp"
#include "zq/transformer.hpp"

namespace zq {

// Layer-by-layer knowledge distillation. Blocks are quantized one at a time,
// in order; block k is trained so that its quantized form matches its own
// full-precision output on hidden states produced by the already sealed
// blocks 0..k-1. Labels are never read.

enum class LossKind { Mse, Kl };
enum class OptimizerKind { Adam, Sgd };

struct OriginalData {
  std::string path;
};
struct RandomTokens {
  std::uint64_t seed = 0;
};
struct AltCorpus {
  std::string path;
};
using DataSource = std::variant<OriginalData, RandomTokens, AltCorpus>;

struct LKDConfig {
  float learning_rate = 5e-6f;
  std::size_t iterations = 100;  // per layer; 0 seals plain quantized weights
  std::size_t batch_size = 32;
  std::size_t seq_len = 128;
  DataSource data_source = RandomTokens{};
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  LossKind loss = LossKind::Mse;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Draws batches from a data source. File sources are read (and validated
/// against the vocabulary) on construction.
class BatchSource {
 public:
  BatchSource(const DataSource& source, std::size_t vocab, std::uint64_t seed);
  TokenBatch next(std::size_t batch, std::size_t seq_len);

 private:
  std::optional<TokenStream> stream_;
  std::size_t vocab_;
  Rng rng_;
};

/// Mean over all elements of (student - teacher)^2.
double mse_loss(const Tensor& student, const Tensor& teacher);
Tensor mse_loss_grad(const Tensor& student, const Tensor& teacher);
/// Mean over rows of KL(softmax(teacher) || softmax(student)), temperature 1.
double kl_loss(const Tensor& student, const Tensor& teacher);
Tensor kl_loss_grad(const Tensor& student, const Tensor& teacher);

/// Gradients of one block in BlockWeights layout (num_heads copied).
using BlockGradients = BlockWeights;

/// Backpropagates `d_out` through a recorded block forward pass. Quantizers
/// are straight-through: weight gradients are taken against the dequantized
/// operands the forward pass used, and input gradients pass unchanged.
BlockGradients backward_block(const detail::BlockTape& tape, const Tensor& ln1_gamma, const Tensor& ln2_gamma,
                              const Tensor& d_out, Tensor* d_input = nullptr);

struct LossAndGradients {
  double loss = 0.0;
  BlockGradients grads;
  Tensor input_grad;
};

/// Student forward (master weights quantized under `precision`), loss against
/// `teacher_out`, and gradients w.r.t. the master weights, biases and LN
/// parameters.
LossAndGradients lkd_backward(const BlockWeights& master, const Tensor& h, const Tensor& teacher_out,
                              const PrecisionConfig& precision, const ForwardOptions& options,
                              LossKind loss = LossKind::Mse);

/// Loss of one block: both teacher (float) and student (quantized) consume
/// the identical hidden states from the model's first `layer` blocks.
double lkd_layer_loss(const ToyModel& model, std::size_t layer, const TokenBatch& batch, const BlockWeights& teacher,
                      const QuantizedBlock& student, const PrecisionConfig& precision, const RunOptions& options = {},
                      LossKind loss = LossKind::Mse);

/// Full-precision shadow copy of the block under distillation plus its
/// optimizer state. Instances are counted so callers can check that only
/// one block ever holds training state.
class MasterWeights {
 public:
  MasterWeights(const BlockWeights& original, OptimizerKind optimizer);
  ~MasterWeights();
  MasterWeights(const MasterWeights&) = delete;
  MasterWeights& operator=(const MasterWeights&) = delete;

  const BlockWeights& weights() const { return weights_; }
  void step(const BlockGradients& grads, const LKDConfig& config);
  std::size_t steps() const { return steps_; }

  static std::size_t live_count();

 private:
  BlockWeights weights_;
  BlockWeights first_moment_;
  BlockWeights second_moment_;
  OptimizerKind optimizer_;
  std::size_t steps_ = 0;
};

struct LkdProgress {
  std::size_t layer = 0;
  std::size_t iteration = 0;
  double loss = 0.0;
};
using LkdObserver = std::function<void(const LkdProgress&)>;

struct LayerResult {
  QuantizedBlock sealed;
  std::vector<double> loss_history;
  // Loss on the first training batch before any update and after sealing;
  // both empty when iterations == 0.
  std::optional<double> initial_loss;
  std::optional<double> final_loss;
};

/// Distills block `layer`. Blocks before it must be sealed, the block itself
/// must still be in full precision.
LayerResult lkd_quantize_layer(const ToyModel& model, std::size_t layer, const LKDConfig& config,
                               const PrecisionConfig& precision, const CalibrationTable* calibration = nullptr,
                               const LkdObserver& observer = {});

struct LKDReport {
  std::vector<LayerResult> layers;
};

/// Seals every block in order. The model must start fully in full precision.
LKDReport lkd_quantize_model(ToyModel& model, const LKDConfig& config, const PrecisionConfig& precision,
                             const CalibrationTable* calibration = nullptr, const LkdObserver& observer = {});

}  // namespace zq
