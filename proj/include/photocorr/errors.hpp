#pragma once

#include <stdexcept>
#include <string>

namespace photocorr {

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Detector calibration could not identify its parameters from the data.
class CalibrationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace photocorr
