// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "zq/igemm.hpp"
#include "zq/quant.hpp"
#include "zq/tensor.hpp"

namespace zq {

inline constexpr float kLayerNormEps = 1e-5f;
inline constexpr int kActivationBits = 8;

enum class WeightPrecision { Full, Int8, Int4 };
int weight_bits(WeightPrecision p);  // 0 for Full

/// A16: every GeMM input in float. A8: every GeMM input in INT8.
/// A8/16: INT8 everywhere except the input of the q/k/v GeMMs.
enum class ActivationScheme { Full, AllInt8, AttnInputFull };

/// WxAy precision scheme for a transformer block.
struct PrecisionConfig {
  WeightPrecision mhsa_weights = WeightPrecision::Full;
  WeightPrecision ffc_weights = WeightPrecision::Full;
  ActivationScheme activations = ActivationScheme::Full;
  bool activation_static = false;
  std::size_t group_count = 1;

  static PrecisionConfig full() { return {}; }

  /// Parses labels such as "W8A8", "W4/8A16", "W4/8A8/16", "W16A16".
  static PrecisionConfig from_scheme(std::string_view scheme, std::size_t groups);

  std::string label() const;
  bool quantizes_weights() const;
  bool quantizes_activations() const { return activations != ActivationScheme::Full; }
  void validate() const;

  bool operator==(const PrecisionConfig&) const = default;
};

/// Scheme labels accepted by from_scheme, for error messages.
const std::vector<std::string>& known_schemes();

/// Group count defaults keyed by hidden size: 128 from 2048, 64 from 1024,
/// 48 from 512, and 16 (capped at dim) for toy sizes.
std::size_t default_group_count(std::size_t dim);

/// GeMM input sites of a block. q/k/v share one input tensor.
enum class Site : std::size_t { QkvInput = 0, AttnOutInput = 1, FfcInInput = 2, FfcOutInput = 3 };
inline constexpr std::size_t kNumSites = 4;
inline constexpr std::array<Site, kNumSites> kAllSites = {Site::QkvInput, Site::AttnOutInput, Site::FfcInInput,
                                                          Site::FfcOutInput};
std::string_view site_name(Site site);
std::optional<Site> parse_site(std::string_view name);

using SiteScales = std::array<float, kNumSites>;
/// One entry per layer.
using CalibrationTable = std::vector<SiteScales>;

/// Activation handling of one GeMM input under a precision scheme.
ActMode activation_mode_for(Site site, const PrecisionConfig& precision, const SiteScales* static_scales);

/// Float parameters of one post-LN transformer block. Weights are
/// output-major: w_h4h is [4d x d], w_4hh is [d x 4d].
struct BlockWeights {
  Tensor w_q, w_k, w_v, w_o, w_h4h, w_4hh;
  Tensor b_q, b_k, b_v, b_o, b_h4h, b_4hh;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  std::size_t num_heads = 1;

  std::size_t dim() const { return w_q.rows(); }
  void validate() const;
  bool operator==(const BlockWeights&) const = default;
};

using LinearWeight = std::variant<Tensor, QuantizedMatrix>;

/// Block whose weight matrices carry their deployed form. A matrix kept in
/// full precision stays a Tensor; LN parameters and biases are always float.
struct QuantizedBlock {
  LinearWeight w_q, w_k, w_v, w_o, w_h4h, w_4hh;
  Tensor b_q, b_k, b_v, b_o, b_h4h, b_4hh;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  std::size_t num_heads = 1;
  std::optional<SiteScales> static_scales;

  std::size_t dim() const;
  bool operator==(const QuantizedBlock&) const = default;
};

using Block = std::variant<BlockWeights, QuantizedBlock>;

/// Quantizes weights per `precision`: MHSA matrices share one width, FFC
/// matrices another, each with `precision.group_count` row groups.
QuantizedBlock quantize_block(const BlockWeights& block, const PrecisionConfig& precision);

/// Effective float view of a linear weight (dequantized if quantized).
Tensor effective_weight(const LinearWeight& w);

struct ForwardOptions {
  bool causal = false;
  std::size_t seq_len = 0;  // rows per sequence; 0 treats the input as one sequence
  const SiteScales* static_scales = nullptr;
  const std::function<void(Site, const Tensor&)>* observer = nullptr;
};

/// h = LN1(x + MHSA(x)); y = LN2(h + FFC(h)). Float blocks have their
/// weights quantized on the fly according to `precision`.
Tensor block_forward(const Tensor& x, const BlockWeights& block, const PrecisionConfig& precision,
                     const ForwardOptions& options = {});
Tensor block_forward(const Tensor& x, const QuantizedBlock& block, const PrecisionConfig& precision,
                     const ForwardOptions& options = {});

/// Row-major [batch x seq_len] token ids.
struct TokenBatch {
  std::vector<std::uint32_t> ids;
  std::size_t batch = 1;
  std::size_t seq_len = 0;

  static TokenBatch single(std::vector<std::uint32_t> ids);
  std::size_t tokens() const { return ids.size(); }
  void validate(std::size_t vocab) const;
};

struct ToyModel {
  Tensor embedding;  // [V x d], also the tied output head
  std::vector<Block> blocks;
  Tensor final_ln_gamma, final_ln_beta;
  bool causal = true;

  std::size_t vocab() const { return embedding.rows(); }
  std::size_t dim() const { return embedding.cols(); }
  std::size_t num_layers() const { return blocks.size(); }
  std::size_t num_heads() const;
  bool is_quantized(std::size_t layer) const { return std::holds_alternative<QuantizedBlock>(blocks[layer]); }
  /// Number of leading quantized blocks; throws InvariantError if the quantized
  /// blocks do not form a prefix.
  std::size_t quantized_prefix() const;
  void validate() const;

  bool operator==(const ToyModel&) const = default;
};

struct ToyConfig {
  std::size_t vocab = 512;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 4;
  std::size_t seq_len = 32;
  bool causal = true;
  float init_std = 0.02f;
  float embed_std = 0.3f;
  bool hetero_knob = false;
  std::uint64_t seed = 0;
};

BlockWeights make_block(std::size_t dim, std::size_t heads, float init_std, Rng& rng);
/// Multiplies a random 25% of the w_o rows by 10.
void apply_hetero_knob(BlockWeights& block, Rng& rng);
ToyModel make_toy_model(const ToyConfig& config);

Tensor sinusoidal_position(std::size_t seq_len, std::size_t dim);
/// Token embedding plus fixed sinusoidal positions, [batch*seq_len x d].
Tensor embed(const TokenBatch& batch, const ToyModel& model);

struct RunOptions {
  const CalibrationTable* calibration = nullptr;
  const std::function<void(std::size_t layer, Site, const Tensor&)>* observer = nullptr;
};

/// Hidden states after the first k blocks (k = 0 gives the embeddings),
/// using each block's current form.
Tensor run_to_layer(const TokenBatch& batch, const ToyModel& model, std::size_t k, const PrecisionConfig& precision,
                    const RunOptions& options = {});

/// Runs block `layer` of the model on `hidden`.
Tensor run_block(const Tensor& hidden, const ToyModel& model, std::size_t layer, const PrecisionConfig& precision,
                 std::size_t seq_len, const RunOptions& options = {});

/// Final layer norm followed by the tied output head.
Tensor model_head(const Tensor& hidden, const ToyModel& model);

/// Logits [batch*seq_len x V].
Tensor model_forward(const TokenBatch& batch, const ToyModel& model, const PrecisionConfig& precision,
                     const RunOptions& options = {});

/// Applies quantize_block to every float block.
ToyModel quantize_model(const ToyModel& model, const PrecisionConfig& precision,
                        const CalibrationTable* calibration = nullptr);

struct SiteRange {
  float x_max = 0.0f;
  float x_min = 0.0f;
  float scale = 1.0f;
};
using SiteRanges = std::vector<std::array<SiteRange, kNumSites>>;

/// Momentum calibration of every GeMM input site on the full-precision model.
SiteRanges calibrate_sites(const ToyModel& model, std::span<const TokenBatch> batches, float momentum, int bits);
CalibrationTable to_calibration_table(const SiteRanges& ranges);

struct TokenRange {
  std::size_t layer = 0;
  std::size_t token = 0;
  std::array<float, kNumSites> min{};
  std::array<float, kNumSites> max{};
};

struct WeightRowRange {
  std::size_t layer = 0;
  std::size_t row = 0;
  float min = 0.0f;
  float max = 0.0f;
  float max_abs = 0.0f;
};

struct RangeReport {
  std::vector<TokenRange> tokens;   // layers x tokens rows
  std::vector<WeightRowRange> w_o;  // layers x d rows

  /// Largest / smallest row max-magnitude of w_o in one layer.
  double w_o_row_spread(std::size_t layer) const;
};

/// Token-wise GeMM-input ranges and row-wise w_o ranges on the float path.
RangeReport range_report(const ToyModel& model, const TokenBatch& sample);
RangeReport range_report(const ToyModel& model, const Tensor& hidden, std::size_t seq_len);

}  // namespace zq
