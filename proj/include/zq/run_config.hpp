// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>

#include "zq/lkd.hpp"
#include "zq/transformer.hpp"

namespace zq {

/// Distillation run settings read from `key = value` lines. `#` starts a
/// comment. Keys:
///   scheme, groups, static_act, attn_input_full, calib,
///   learning_rate, iterations, batch_size, seq_len, optimizer, beta1, beta2,
///   adam_eps, loss, data_source (random | original | corpus), data,
///   seed, out, loss_csv
struct RunConfig {
  std::string scheme = "W4/8A8";
  std::optional<std::size_t> groups;  // default_group_count(dim) when unset
  bool static_act = false;
  bool attn_input_full = false;
  std::string calib_path;
  std::string data_path;
  std::string out_path;
  std::string loss_csv_path;
  LKDConfig lkd;

  /// Precision for a model of hidden size `dim`.
  PrecisionConfig precision(std::size_t dim) const;
};

/// Throws ConfigError naming `source` and the line for unknown keys,
/// malformed values, duplicate keys and missing data paths.
RunConfig parse_run_config(std::istream& in, const std::string& source);
RunConfig load_run_config(const std::string& path);

/// Applies the flag-style switches shared by the quantize command and the
/// config file.
PrecisionConfig make_precision(const std::string& scheme, std::size_t groups, bool static_act, bool attn_input_full);

}  // namespace zq
