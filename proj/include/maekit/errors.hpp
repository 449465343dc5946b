#pragma once

#include <stdexcept>
#include <string>

namespace maekit {

/// Operand shapes are incompatible for the requested operation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An index lies outside the valid range of the indexed axis.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Invalid configuration value (ratio, sizes, class counts, ...).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A configuration the library deliberately does not implement.
class UnsupportedConfigError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Caller violated a documented precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Image or dataset file rejected while parsing.
class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint file could not be read back.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, std::size_t step)
        : std::runtime_error(what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

}  // namespace maekit
