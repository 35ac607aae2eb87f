#pragma once

#include <stdexcept>
#include <string>

namespace matchcut {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration or argument failed validation. `field()` names the
/// offending field so callers (CLI, HTTP service) can report it precisely.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& message)
        : Error(field + ": " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Sampling produced a non-finite latent.
class NumericalError : public Error {
public:
    NumericalError(int iteration, const std::string& message)
        : Error("iteration " + std::to_string(iteration) + ": " + message), iteration_(iteration) {}

    int iteration() const noexcept { return iteration_; }

private:
    int iteration_;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace matchcut
