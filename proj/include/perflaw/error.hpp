#pragma once

#include <stdexcept>
#include <string>

namespace perflaw {

// Error classes map one-to-one onto the CLI exit codes (2, 3, 4).
enum class ErrorKind { io, validation, numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Raised when ApEn is too close to zero for ApEn' = 1/ApEn to be meaningful.
class DegenerateApEnError : public NumericError {
public:
    explicit DegenerateApEnError(double apen);
    double apen() const noexcept { return apen_; }

private:
    double apen_;
};

}  // namespace perflaw
