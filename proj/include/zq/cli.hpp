// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "zq/transformer.hpp"

namespace zq {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `zq` command line; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// CSV with header layer,site,x_max,x_min,scale and one row per (layer, site).
void write_calibration_csv(std::ostream& out, const SiteRanges& ranges);
/// Throws InputError on malformed files or a layer count other than `layers`.
SiteRanges read_calibration_csv(const std::string& path, std::size_t layers);

}  // namespace zq
