// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "zq/transformer.hpp"

namespace zq {

// Binary model file, all fields little-endian:
//   "ZQCK"  u32 version
//   u32 vocab  u32 dim  u32 heads  u32 layers  u8 causal
//   u8 has_precision [u8 mhsa u8 ffc u8 activations u8 static u32 groups]
//   tensor embedding  tensor final_ln_gamma  tensor final_ln_beta
//   per block: u8 kind (0 float, 1 quantized) followed by its sections
// A float tensor is u32 rank, u32 dims, f32 values. A quantized matrix is
// u32 rows, u32 cols, u8 bits, u32 num_groups, (u32 start, u32 count) per
// group, f32 scales, i8 values (row-major).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ToyModel model;
  std::optional<PrecisionConfig> precision;  // scheme the model was quantized under

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws InputError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace zq
