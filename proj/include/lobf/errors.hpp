#pragma once

#include <stdexcept>
#include <string>

namespace lobf {

// Error taxonomy shared across the library. Every failure carries enough
// context in the message to diagnose it without a debugger.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not satisfy an operation's requirements.
struct ShapeError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required, or numeric divergence.
struct NumericError : Error {
  using Error::Error;
};

// A call violates an API precondition (wrong mode, missing argument, ...).
struct ContractError : Error {
  using Error::Error;
};

// Invalid configuration detected at construction time.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input files (CSV, JSON).
struct ParseError : Error {
  using Error::Error;
};

// Checkpoint or report I/O failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace lobf
