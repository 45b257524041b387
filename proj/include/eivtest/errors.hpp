#pragma once

#include <stdexcept>
#include <string>

namespace eiv {

// Base of everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation (negative
// quadratic form, index out of range, mismatched dimensions).
class DomainError : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    explicit NotPositiveDefinite(int pivot)
        : Error("matrix is not positive definite (pivot " + std::to_string(pivot) + ")"),
          pivot_(pivot) {}

    int pivot() const noexcept { return pivot_; }

private:
    int pivot_;
};

// Log-likelihood or one of its derivatives could not be evaluated at the
// requested parameter point.
class EvaluationError : public Error {
public:
    using Error::Error;
};

class InitializationError : public Error {
public:
    using Error::Error;
};

}  // namespace eiv
