#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csched {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument: out-of-range index, dimension mismatch, negative rate.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Bundled data file missing or unreadable.
class AssetError : public Error {
 public:
  using Error::Error;
};

/// Random graph generator could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Request exceeds what an algorithm supports (solver cap, multi-band Q-CSMA).
class CapabilityError : public Error {
 public:
  using Error::Error;
};

/// Call sequence violated (step before begin_slot, stale cache, ...).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration file, key or value; also checkpoint/graph mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Time series too short for a statistic.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace csched
