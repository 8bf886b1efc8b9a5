// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nisf {

/// Incompatible tensor shapes or extents.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A documented precondition or postcondition was violated by the caller.
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// NaN/Inf values or a diverging optimization.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent file on disk. Subclasses let callers tell the
/// load failures apart.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class VersionMismatchError : public FormatError {
  public:
    using FormatError::FormatError;
};

class TruncatedPayloadError : public FormatError {
  public:
    using FormatError::FormatError;
};

class ShapePayloadError : public FormatError {
  public:
    using FormatError::FormatError;
};

}  // namespace nisf
