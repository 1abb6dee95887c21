#pragma once

#include <stdexcept>
#include <string>

namespace cbvi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A label outside 1..K, or a dataset that violates its invariants.
class InvalidLabel : public Error {
public:
    using Error::Error;
};

/// Operand shapes do not conform.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// Non-finite or otherwise invalid input data.
class InvalidData : public Error {
public:
    using Error::Error;
};

/// A covariance matrix that failed the SPD factorization.
class InvalidCovariance : public Error {
public:
    using Error::Error;
};

/// A linear system that became degenerate during inference.
class NumericalFailure : public Error {
public:
    using Error::Error;
};

/// Simulation or run configuration that cannot be honored.
class InvalidSpec : public Error {
public:
    using Error::Error;
};

/// File could not be read, parsed or written.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace cbvi
