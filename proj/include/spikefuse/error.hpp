#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spikefuse {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or layer dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value lies outside its mathematical domain (e.g. depth beyond d_max).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Index outside a container's valid range.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration (bad layer chain, incommensurate windows, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite value encountered during simulation or training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// An operation was called in a state that cannot support it.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed file content. Always carries the byte offset of the rejection.
class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(what + " (byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Checkpoint-specific parse/validation failure; carries an offset as well.
class CheckpointError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace spikefuse
