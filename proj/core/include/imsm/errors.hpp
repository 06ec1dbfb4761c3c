#pragma once

#include <stdexcept>
#include <string>

namespace imsm {

// Shape or dimension disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Contract violation by the caller (empty input, bad range, ...).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a forward op, or a non-finite loss.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input file could not be parsed (bad JSONL line, bad checkpoint).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Sequence would exceed the model's maximum length.
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace imsm
