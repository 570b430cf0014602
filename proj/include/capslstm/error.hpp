#pragma once

#include <stdexcept>
#include <string>

namespace capslstm {

// Root of every error thrown by the library. Subclasses partition failures by
// family so callers (the CLI in particular) can map them to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid scalar argument (stride, axis, iteration count, alpha, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed binary/text payload (weights file, image file).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Dataset layout problems: missing metadata, too few clips, ...
class DatasetError : public Error {
 public:
  using Error::Error;
};

// Dataset content that parses but violates a rule (bad label, empty clip).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed JSON, carries the 0-based byte offset of the failure.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Inconsistent model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace capslstm
