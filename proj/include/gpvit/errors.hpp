#pragma once

#include <stdexcept>
#include <string>

namespace gpvit {

/// Base of every error raised by the library. The CLI maps subclasses to
/// exit codes (see tools/gpvit_main.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse and validation.
class DimensionError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class BoundsError : public Error { public: using Error::Error; };
class StateError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class ModeError : public ConfigError { public: using ConfigError::ConfigError; };

/// All selection ratios would be 0/0.
class DegenerateGatesError : public DomainError { public: using DomainError::DomainError; };

// Numerics.
class NumericError : public Error { public: using Error::Error; };
class DeterminismError : public NumericError { public: using NumericError::NumericError; };

// Files.
class IoError : public Error { public: using Error::Error; };
class FormatError : public IoError { public: using IoError::IoError; };
class MagicError : public FormatError { public: using FormatError::FormatError; };
class VersionError : public FormatError { public: using FormatError::FormatError; };
class TruncationError : public FormatError { public: using FormatError::FormatError; };
class CorruptionError : public FormatError { public: using FormatError::FormatError; };
class ShapeError : public FormatError { public: using FormatError::FormatError; };

}  // namespace gpvit
