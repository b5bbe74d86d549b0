#pragma once

#include <stdexcept>
#include <string>

namespace mltp {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Rejected input: shape mismatch, bad label, misaligned groups.
struct InvalidArgument : Error {
    using Error::Error;
};

/// Bad experiment configuration (unknown key, invalid value, bad file path).
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite value where a finite one is required (aborts the run, exit 3).
struct NumericError : Error {
    using Error::Error;
};

/// Dataset ingestion failure (bad magic, truncation, count mismatch).
struct IoError : Error {
    using Error::Error;
};

} // namespace mltp
