#pragma once

#include <stdexcept>
#include <string>

namespace edgeseg {

enum class ErrorKind {
  Precondition,
  UnmappedValue,
  ShapeMismatch,
  MissingAlpha,
  EmptySet,
  EmptyBoth,
  EmptyDisc,
  EmptyList,
  MalformedPrediction,
  ShapeError,
  CacheMismatch,
  ConfigError,
  TooFewSamples,
  Diverged,
  Io,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Configuration-class failures map to CLI exit status 1, the rest to 2.
  bool is_config_error() const noexcept {
    return kind_ == ErrorKind::ConfigError || kind_ == ErrorKind::UnmappedValue ||
           kind_ == ErrorKind::MissingAlpha;
  }

 private:
  ErrorKind kind_;
};

class UnmappedValueError : public Error {
 public:
  UnmappedValueError(int value, const std::string& context)
      : Error(ErrorKind::UnmappedValue,
              "raw value " + std::to_string(value) + " has no label mapping" +
                  (context.empty() ? std::string() : " (" + context + ")")),
        value_(value) {}

  int value() const noexcept { return value_; }

 private:
  int value_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Precondition: return "Precondition";
    case ErrorKind::UnmappedValue: return "UnmappedValue";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingAlpha: return "MissingAlpha";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::EmptyBoth: return "EmptyBoth";
    case ErrorKind::EmptyDisc: return "EmptyDisc";
    case ErrorKind::EmptyList: return "EmptyList";
    case ErrorKind::MalformedPrediction: return "MalformedPrediction";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::CacheMismatch: return "CacheMismatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::TooFewSamples: return "TooFewSamples";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace edgeseg
