#pragma once

#include <stdexcept>
#include <string>

namespace alto {

// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed config files, unknown keys, invalid flag values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Problems with corpora on disk: unreadable images, orphaned files,
// malformed truth records, missing directories.
class DataError : public Error {
public:
    using Error::Error;
};

// Numerical failures: singular matrices, degenerate point configurations,
// points at infinity, non-finite losses.
class NumericsError : public Error {
public:
    using Error::Error;
};

class PointAtInfinityError : public NumericsError {
public:
    using NumericsError::NumericsError;
};

class DegenerateConfigError : public NumericsError {
public:
    using NumericsError::NumericsError;
};

class SingularMatrixError : public NumericsError {
public:
    using NumericsError::NumericsError;
};

} // namespace alto
