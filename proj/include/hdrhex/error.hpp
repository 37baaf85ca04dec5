#pragma once

#include <stdexcept>
#include <string>

namespace hdrhex {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A function was called with an argument outside its domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Objects that must agree in shape or configuration do not.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Lookup of an image index (or similar key) that does not exist.
class IndexError : public Error {
public:
    using Error::Error;
};

/// A loss or tensor became non-finite.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Malformed or missing file. The offending path is kept separately.
class ParseError : public Error {
public:
    ParseError(std::string path, const std::string& what)
        : Error(path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace hdrhex
