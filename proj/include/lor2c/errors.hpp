// Copyright (c) 2026 lor2c authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lor2c {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or dimension sizes.
struct DimensionError : Error {
    using Error::Error;
};

// Out-of-range index (token id, label, layer, sequence position).
struct RangeError : Error {
    using Error::Error;
};

// A precondition of an operation was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values or other numeric failures.
struct NumericError : Error {
    using Error::Error;
};

// Invalid model layout (overlapping spans, bad span bounds, ...).
struct LayoutError : Error {
    using Error::Error;
};

// Invalid or unparsable configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem / serialization failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace lor2c
