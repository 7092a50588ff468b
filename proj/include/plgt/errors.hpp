#pragma once

#include <stdexcept>
#include <string>

namespace plgt {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Numeric domain violations (e.g. elementwise power of a non-positive base).
struct DomainError : Error {
    using Error::Error;
};

// Invalid configuration values.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or unusable input data.
struct DataError : Error {
    using Error::Error;
};

// API contract violations (e.g. backward on a non-scalar loss).
struct ContractError : Error {
    using Error::Error;
};

// Training-time numeric failures (divergence, non-finite gradients).
struct TrainError : Error {
    using Error::Error;
};

// File I/O and serialization failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace plgt
