// Copyright (c) 2026 The zquant Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace zq {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller passed arguments outside an operation's contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise unrepresentable numeric input.
class ValueError : public Error {
 public:
  using Error::Error;
};

// Configuration that cannot run (e.g. accumulator overflow, bad config file).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or malformed input files.
class InputError : public Error {
 public:
  using Error::Error;
};

// A data structure was found in a state its own invariants forbid.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace zq
