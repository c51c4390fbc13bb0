// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vgloss {

/// Precondition violation on a caller-supplied value (bad dimension, empty input, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A ground-truth box that cannot serve as a regression target (zero width or height).
class InvalidTarget : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed line in a JSONL file. Carries the 1-based line number.
class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed data whose dimensions disagree with each other or with a checkpoint.
class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// API misuse, e.g. backward() without a cached forward pass.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Non-finite loss during training.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace vgloss
