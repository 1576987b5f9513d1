#pragma once

#include <stdexcept>
#include <string>

namespace pepler {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command lines, unknown config keys, incompatible flag combinations.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Structurally broken input (malformed JSON lines, unreadable merge tables).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed input that violates a documented constraint (rating out of
// range, feature missing from its explanation, impossible vocabulary target).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor shape mismatches; the message names the op and both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Unknown user/item/token ids.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where the pipeline cannot continue (NaN training loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem-level failures: missing files, short reads, unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint-file problems, tagged so callers can tell corruption kinds apart.
class CheckpointError : public Error {
 public:
  enum class Kind { kBadMagic, kBadHeader, kTruncated, kShapeMismatch };

  CheckpointError(Kind kind, const std::string& msg) : Error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace pepler
