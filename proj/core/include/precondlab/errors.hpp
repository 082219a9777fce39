#pragma once

#include <stdexcept>
#include <string>

namespace precondlab {

// Root of every error thrown by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SymmetryError : public Error {
public:
    using Error::Error;
};

class SingularityError : public Error {
public:
    using Error::Error;
};

// Non-finite intermediate values (e.g. a Hutchinson estimate that overflowed).
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Missing, truncated or malformed input files.
class DataError : public Error {
public:
    using Error::Error;
};

}  // namespace precondlab
