#pragma once

#include <stdexcept>
#include <string>

namespace mtriage {

// Every failure raised by the library derives from Error. The CLI maps
// IoError to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class LengthError : public FormatError {
public:
    using FormatError::FormatError;
};

class SizeError : public Error {
public:
    using Error::Error;
};

class BoundsError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    NumericError(const std::string& what, int layer = -1)
        : Error(what), layer_(layer) {}

    /// Layer index where the non-finite value appeared, -1 if not layer-bound.
    int layer() const noexcept { return layer_; }

private:
    int layer_;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class EmptyPartitionError : public Error {
public:
    EmptyPartitionError(const std::string& tag)
        : Error("empty partition for tag '" + tag + "'"), tag_(tag) {}
    const std::string& tag() const noexcept { return tag_; }

private:
    std::string tag_;
};

} // namespace mtriage
