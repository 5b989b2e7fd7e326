/*
 * Copyright (C) 2026 wheelcal authors
 *
 * SPDX-License-Identifier: Apache-2.0
 * See the file LICENSE for more information.
 */
#pragma once

#include <stdexcept>
#include <string>

namespace wheelcal {

// Error classes map one-to-one to CLI exit codes; see tools/wheelcal_main.cpp.
//   2 schema, 3 observability, 4 convergence, 5 conditioning.

struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& m) : std::runtime_error(m) {}
};

struct ObservabilityError : std::runtime_error {
  explicit ObservabilityError(const std::string& m) : std::runtime_error(m) {}
};

struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& m) : std::runtime_error(m) {}
};

struct ConditioningError : std::runtime_error {
  explicit ConditioningError(const std::string& m) : std::runtime_error(m) {}
};

// Scan matching divergence; callers may keep the pair as an outlier sample.
struct MatchFailureError : std::runtime_error {
  explicit MatchFailureError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace wheelcal
