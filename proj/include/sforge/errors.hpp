#pragma once

#include <stdexcept>
#include <string>

namespace sforge {

// Precondition violated by the caller (bad index, bad range, bad config).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Array or batch sizes disagree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Value outside the mathematical domain of an estimator (log of a non-positive loss, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Zero-variance data where a standardization was requested.
class DegenerateDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or truncated file, wrong magic or version.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sforge
